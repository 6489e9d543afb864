use icon_core::dataset::{
    decode_family, encode_family, generate_dataset, generate_family, load_dataset, verify_record, FamilyData,
    ParamBounds, ProblemFamily, ALL_FAMILY_IDS, MANIFEST_NAME,
};
use icon_core::IconError;
use proptest::prelude::*;

fn family(id: u8) -> ProblemFamily {
    ProblemFamily::new(id).unwrap()
}

fn small(id: u8, seed: u64) -> FamilyData {
    generate_family(family(id), 3, 2, seed, &ParamBounds::new()).unwrap()
}

#[test]
fn every_family_round_trips_through_the_file_format() {
    for id in ALL_FAMILY_IDS {
        let data = small(id, 5);
        let bytes = encode_family(&data).unwrap();
        let back = decode_family(&bytes, "mem").unwrap();
        assert_eq!(back, data, "family {id}");
        assert_eq!(encode_family(&back).unwrap(), bytes);
    }
}

#[test]
fn truncated_or_corrupted_files_fail_the_checksum() {
    let bytes = encode_family(&small(3, 1)).unwrap();
    for cut in [1, 17, bytes.len() / 2] {
        let err = decode_family(&bytes[..bytes.len() - cut], "cut").unwrap_err();
        assert!(matches!(err, IconError::Checksum(_)), "cut {cut}: {err}");
    }
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(decode_family(&flipped, "flip").unwrap_err(), IconError::Checksum(_)));
}

#[test]
fn unknown_format_version_is_rejected() {
    let mut bytes = encode_family(&small(1, 1)).unwrap();
    bytes[6] = 99;
    match decode_family(&bytes, "v").unwrap_err() {
        IconError::VersionMismatch { found, .. } => assert_eq!(found, 99),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn datagen_is_byte_reproducible() {
    let families = [family(1), family(8), family(16)];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = generate_dataset(&families, 4, 3, 77, a.path()).unwrap();
    let mb = generate_dataset(&families, 4, 3, 77, b.path()).unwrap();
    assert_eq!(ma, mb);
    for entry in &ma.files {
        let fa = std::fs::read(a.path().join(&entry.file)).unwrap();
        let fb = std::fs::read(b.path().join(&entry.file)).unwrap();
        assert_eq!(fa, fb, "{}", entry.file);
    }
    assert_eq!(
        std::fs::read(a.path().join(MANIFEST_NAME)).unwrap(),
        std::fs::read(b.path().join(MANIFEST_NAME)).unwrap()
    );
    let other = tempfile::tempdir().unwrap();
    let mc = generate_dataset(&families, 4, 3, 78, other.path()).unwrap();
    assert_ne!(ma.files[0].sha256, mc.files[0].sha256);
}

#[test]
fn generation_does_not_depend_on_thread_count() {
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| generate_family(family(11), 6, 4, 9, &ParamBounds::new()).unwrap())
    };
    assert_eq!(encode_family(&run(1)).unwrap(), encode_family(&run(3)).unwrap());
}

#[test]
fn manifest_checksum_guards_loading() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(&[family(2)], 3, 2, 1, dir.path()).unwrap();
    let ds = load_dataset(dir.path()).unwrap();
    assert_eq!(ds.family(family(2)).unwrap().records.len(), 6);

    // A file that is internally valid but differs from the manifest entry.
    let replacement = encode_family(&small(2, 2)).unwrap();
    std::fs::write(dir.path().join(&manifest.files[0].file), replacement).unwrap();
    assert!(matches!(load_dataset(dir.path()).unwrap_err(), IconError::Checksum(_)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn stored_records_regenerate_bit_for_bit(id in ALL_FAMILY_IDS, seed in 0u64..10_000) {
        let data = generate_family(family(id), 2, 2, seed, &ParamBounds::new()).unwrap();
        for r in &data.records {
            prop_assert!(verify_record(&data.operators[r.operator_index as usize], r).unwrap());
            prop_assert!(r.condition.iter().all(|f| f.is_finite()) && r.qoi.is_finite());
        }
        let back = decode_family(&encode_family(&data).unwrap(), "p").unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn any_single_byte_flip_is_detected(pos in 8usize..4000, bit in 0u8..8) {
        let bytes = encode_family(&small(5, 3)).unwrap();
        let pos = pos % bytes.len();
        let mut bad = bytes.clone();
        bad[pos] ^= 1 << bit;
        prop_assert!(decode_family(&bad, "flip").is_err());
    }
}
