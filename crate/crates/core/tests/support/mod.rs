use bn_lens::data::{Dataset, IMAGE_PIXELS, NUM_CLASSES};
use bn_lens::linalg::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// MNIST-shaped data: byte-valued pixels in `[0,1]`, mostly zero, with a
/// class-dependent block of lit pixels so the labels are learnable.
pub fn fake_mnist(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = vec![0.0; n * IMAGE_PIXELS];
    let mut classes = Vec::with_capacity(n);
    for (i, row) in pixels.chunks_mut(IMAGE_PIXELS).enumerate() {
        let c = i % NUM_CLASSES;
        classes.push(c);
        for p in row.iter_mut().skip(c * 70).take(70) {
            if rng.random_bool(0.6) {
                *p = f64::from(rng.random_range(1u8..=255)) / 255.0;
            }
        }
        for _ in 0..20 {
            row[rng.random_range(0..IMAGE_PIXELS)] = f64::from(rng.random::<u8>()) / 255.0;
        }
    }
    Dataset::new(Matrix::new(n, IMAGE_PIXELS, pixels).unwrap(), &classes).unwrap()
}
