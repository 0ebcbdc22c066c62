use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use hvfl_core::fxp::{decode_vec, encode_slice};
use hvfl_core::mpc::{reconstruct, share};

const LSB: f64 = 1.0 / 65536.0;

proptest! {
    #[test]
    fn encode_decode_is_within_half_an_lsb(v in prop::collection::vec(-1.0e6f64..1.0e6, 1..64)) {
        let t = encode_slice(vec![v.len()], &v, 16).unwrap();
        for (a, b) in decode_vec(&t).iter().zip(&v) {
            prop_assert!((a - b).abs() <= LSB / 2.0 + 1e-12);
        }
    }

    #[test]
    fn shares_reconstruct_exactly(v in prop::collection::vec(-1.0e6f64..1.0e6, 1..64), seed in any::<u64>()) {
        let t = encode_slice(vec![v.len()], &v, 16).unwrap();
        let (a, b) = share(&t, &mut ChaCha12Rng::seed_from_u64(seed), 3);
        let r = reconstruct(&a, &b).unwrap();
        prop_assert_eq!(r.data(), t.data());
    }

    #[test]
    fn share_zero_is_independent_of_the_secret(v in -1.0e3f64..1.0e3, seed in any::<u64>()) {
        // Same randomness, different secrets: party 1's share differs, party 0's does not.
        let x = encode_slice(vec![1], &[v], 16).unwrap();
        let y = encode_slice(vec![1], &[v + 1.0], 16).unwrap();
        let (x0, x1) = share(&x, &mut ChaCha12Rng::seed_from_u64(seed), 3);
        let (y0, y1) = share(&y, &mut ChaCha12Rng::seed_from_u64(seed), 3);
        prop_assert_eq!(x0.share().data(), y0.share().data());
        prop_assert_ne!(x1.share().data(), y1.share().data());
    }
}
