mod common;

use common::*;
use promptrec::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use promptrec::decoding::generate_explanation;
use promptrec::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn save_load_is_bit_exact() {
    let (ckpt, _) = quick_checkpoint(2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pxr");
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(tensor_bits(&ckpt.model), tensor_bits(&back.model));
    assert_eq!(back.vocab, ckpt.vocab);
    assert_eq!(back.users, ckpt.users);
    assert_eq!(back.items, ckpt.items);
    assert_eq!(back.config, ckpt.config);
    assert_eq!(back.epoch, ckpt.epoch);
    assert_eq!(back.best_val_loss.map(f64::to_bits), ckpt.best_val_loss.map(f64::to_bits));
    // Saving the loaded checkpoint reproduces the same bytes.
    assert_eq!(back.to_bytes().unwrap(), ckpt.to_bytes().unwrap());
}

#[test]
fn loaded_checkpoint_generates_identically() {
    let (ckpt, _) = quick_checkpoint(2);
    let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let u = rng.random_range(0..ckpt.users.len());
        let i = rng.random_range(0..ckpt.items.len());
        assert_eq!(
            generate_explanation(&ckpt, u, i, 20).unwrap(),
            generate_explanation(&back, u, i, 20).unwrap()
        );
    }
}

#[test]
fn corrupted_magic_is_an_integrity_error() {
    let (ckpt, _) = quick_checkpoint(1);
    let mut bytes = ckpt.to_bytes().unwrap();
    bytes[0] ^= 0xff;
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Integrity(_))));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..3]), Err(Error::Integrity(_))));
}

#[test]
fn version_mismatch_is_reported() {
    let (ckpt, _) = quick_checkpoint(1);
    let bytes = ckpt.to_bytes().unwrap();
    let needle = b"\"format_version\":1";
    let at = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
    let mut patched = bytes.clone();
    patched[at + needle.len() - 1] = b'7';
    match Checkpoint::from_bytes(&patched) {
        Err(Error::UnsupportedVersion { found: 7, expected: 1 }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn truncated_payload_is_an_integrity_error() {
    let (ckpt, _) = quick_checkpoint(1);
    let bytes = ckpt.to_bytes().unwrap();
    for cut in [bytes.len() - 1, bytes.len() - 4, 20, 12] {
        assert!(
            matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Integrity(_))),
            "cut at {cut}"
        );
    }
    let mut longer = bytes.clone();
    longer.extend_from_slice(&[0, 0, 0, 0]);
    assert!(matches!(Checkpoint::from_bytes(&longer), Err(Error::Integrity(_))));
}

#[test]
fn flipped_payload_byte_still_loads_with_changed_parameters() {
    let (ckpt, _) = quick_checkpoint(1);
    let mut bytes = ckpt.to_bytes().unwrap();
    let last = bytes.len() - 9;
    bytes[last] ^= 0x01;
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_ne!(tensor_bits(&back.model), tensor_bits(&ckpt.model));
}
