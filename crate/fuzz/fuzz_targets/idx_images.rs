#![no_main]

use libfuzzer_sys::fuzz_target;
use ntklab::datagen::{encode_idx_images, images_to_sphere, parse_idx_images};

fuzz_target!(|data: &[u8]| {
    if let Ok(images) = parse_idx_images(data) {
        let reencoded = encode_idx_images(&images);
        assert_eq!(parse_idx_images(&reencoded).unwrap(), images);
        let labels = vec![0u8; images.count];
        let _ = images_to_sphere(&images, &labels);
    }
});
