use ntklab::datagen::{encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels, sample_sphere, IdxImages};
use ntklab::network::{decode_weights, encode_weights, init_weights, predict, NetConfig};
use ntklab::ntk::{kappa0, kappa1, Kernel, LimitingNtk};
use ntklab::numerics::RngStream;
use proptest::prelude::*;

fn row(x: &ntklab::DMatrix<f64>, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn network_is_positively_homogeneous(seed in 0u64..1000, c in 0.01f64..100.0, depth in 2usize..5) {
        let w = init_weights(&NetConfig::new(depth, 16, 6).unwrap(), &mut RngStream::new(seed, 0)).unwrap();
        let x = row(&sample_sphere(1, 6, &mut RngStream::new(seed, 1)).unwrap(), 0);
        let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
        let (f, fc) = (predict(&w, &x).unwrap(), predict(&w, &cx).unwrap());
        prop_assert!((fc - c * f).abs() <= 1e-10 * (1.0 + (c * f).abs()));
    }

    #[test]
    fn limiting_kernel_is_symmetric_and_bounded(seed in 0u64..1000, depth in 2usize..6, d in 2usize..12) {
        let x = sample_sphere(2, d, &mut RngStream::new(seed, 2)).unwrap();
        let k = LimitingNtk::new(depth).unwrap();
        let (a, b) = (row(&x, 0), row(&x, 1));
        let (kab, kba) = (k.eval(&a, &b), k.eval(&b, &a));
        prop_assert_eq!(kab, kba);
        // Cauchy-Schwarz for a PSD kernel; the diagonal on the sphere is the depth.
        prop_assert!((k.eval(&a, &a) - depth as f64).abs() < 1e-12);
        prop_assert!(kab.abs() <= depth as f64 + 1e-12);
    }

    #[test]
    fn arc_cosine_functions_are_monotone(u in -1.0f64..1.0, du in 0.0f64..0.5) {
        let v = (u + du).min(1.0);
        prop_assert!(kappa0(v).unwrap() >= kappa0(u).unwrap());
        prop_assert!(kappa1(v).unwrap() >= kappa1(u).unwrap() - 1e-15);
        prop_assert!((0.0..=1.0).contains(&kappa0(u).unwrap()));
    }

    #[test]
    fn weights_round_trip(seed in 0u64..1000, depth in 2usize..5, width in 1usize..9, d in 1usize..7) {
        let w = init_weights(&NetConfig::new(depth, width, d).unwrap(), &mut RngStream::new(seed, 3)).unwrap();
        let bytes = encode_weights(&w);
        prop_assert_eq!(decode_weights(&bytes).unwrap(), w);
    }

    #[test]
    fn weights_decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode_weights(&bytes);
    }

    #[test]
    fn truncated_weights_are_rejected(seed in 0u64..100, cut in 1usize..40) {
        let w = init_weights(&NetConfig::new(2, 3, 2).unwrap(), &mut RngStream::new(seed, 4)).unwrap();
        let bytes = encode_weights(&w);
        prop_assert!(decode_weights(&bytes[..bytes.len() - cut.min(bytes.len())]).is_err());
    }

    #[test]
    fn idx_round_trip(count in 0usize..6, rows in 1usize..5, cols in 1usize..5, fill in any::<u8>()) {
        let pixels: Vec<u8> = (0..count * rows * cols).map(|i| fill.wrapping_add(i as u8)).collect();
        let images = IdxImages { count, rows, cols, pixels };
        prop_assert_eq!(parse_idx_images(&encode_idx_images(&images)).unwrap(), images);
        let labels: Vec<u8> = (0..count as u8).map(|i| i % 10).collect();
        prop_assert_eq!(parse_idx_labels(&encode_idx_labels(&labels)).unwrap(), labels);
    }

    #[test]
    fn idx_parsers_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..128)) {
        let _ = parse_idx_images(&bytes);
        let _ = parse_idx_labels(&bytes);
    }
}
