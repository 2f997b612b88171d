use proptest::prelude::*;
use usarray::data::{self, DataSource, ImageSet};
use usarray::Error;

fn header(magic: u32, count: u32, rows: u32, cols: u32) -> Vec<u8> {
    [magic, count, rows, cols]
        .iter()
        .flat_map(|v| v.to_be_bytes())
        .collect()
}

#[test]
fn parses_well_formed_header_and_payload() {
    let mut bytes = header(0x0803, 2, 2, 3);
    bytes.extend(0u8..12);
    let set = data::parse_idx_images(&bytes).unwrap();
    assert_eq!((set.len(), set.rows, set.cols), (2, 2, 3));
    assert_eq!(set.images[0], vec![0, 1, 2, 3, 4, 5]);
    assert_eq!(set.images[1], vec![6, 7, 8, 9, 10, 11]);
}

#[test]
fn label_magic_is_rejected() {
    let mut bytes = header(0x0801, 1, 1, 1);
    bytes.push(7);
    let err = data::parse_idx_images(&bytes).unwrap_err();
    assert!(
        matches!(
            err,
            Error::IdxBadMagic {
                offset: 0,
                found: 0x0801
            }
        ),
        "{err:?}"
    );
    assert!(err.to_string().contains("expected image magic"));
}

#[test]
fn truncation_reports_offset() {
    let err = data::parse_idx_images(&[]).unwrap_err();
    assert!(matches!(err, Error::IdxTruncated { offset: 0, .. }), "{err:?}");

    let short = &header(0x0803, 3, 28, 28)[..10];
    let err = data::parse_idx_images(short).unwrap_err();
    assert!(matches!(err, Error::IdxTruncated { offset: 10, .. }), "{err:?}");

    let mut bytes = header(0x0803, 2, 2, 2);
    bytes.extend([1u8; 5]);
    let err = data::parse_idx_images(&bytes).unwrap_err();
    assert!(matches!(err, Error::IdxTruncated { offset: 21, needed: 3 }), "{err:?}");
}

#[test]
fn bundled_fixture_shape() {
    let f = data::mini_fixture();
    assert_eq!((f.len(), f.rows, f.cols), (64, 28, 28));
    assert!(f
        .images
        .iter()
        .all(|img| img.len() == 784 && img.iter().any(|&v| v > 0)));
}

#[test]
fn explicit_path_wins_and_file_io_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("imgs.idx");
    let mut set = data::mini_fixture();
    set.truncate(5);
    data::write_idx_images(&path, &set).unwrap();
    let src = DataSource::resolve(Some(&path));
    assert_eq!(src, DataSource::File(path.clone()));
    assert_eq!(src.load().unwrap(), set);
    assert!(matches!(
        DataSource::File(dir.path().join("missing")).load(),
        Err(Error::Io(_))
    ));
}

#[test]
fn mnist_from_data_dir() {
    // only meaningful when the real training set is available
    if std::env::var_os(data::DATA_DIR_ENV).is_none() {
        eprintln!("skipping: {} not set", data::DATA_DIR_ENV);
        return;
    }
    let set = DataSource::resolve(None).load().unwrap();
    assert_eq!((set.len(), set.rows, set.cols), (60_000, 28, 28));
}

#[test]
fn epoch_order_is_seeded() {
    assert_eq!(data::epoch_order(100, 7, 3), data::epoch_order(100, 7, 3));
    assert_ne!(data::epoch_order(100, 7, 3), data::epoch_order(100, 7, 4));
    assert_ne!(data::epoch_order(100, 7, 3), data::epoch_order(100, 8, 3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_then_read_is_byte_identical(
        rows in 1usize..9,
        cols in 1usize..9,
        count in 0usize..12,
        seed in any::<u64>(),
    ) {
        let mut state = seed;
        let images = (0..count)
            .map(|_| {
                (0..rows * cols)
                    .map(|_| {
                        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        (state >> 56) as u8
                    })
                    .collect()
            })
            .collect();
        let set = ImageSet { rows, cols, images };
        let bytes = data::encode_idx_images(&set);
        prop_assert_eq!(bytes.len(), 16 + count * rows * cols);
        let back = data::parse_idx_images(&bytes).unwrap();
        prop_assert_eq!(&back, &set);
        prop_assert_eq!(data::encode_idx_images(&back), bytes);
    }

    #[test]
    fn batches_partition_each_epoch(n in 1usize..300, size in 1usize..40, seed in any::<u64>(), epoch in 0usize..5) {
        let order = data::epoch_order(n, seed, epoch);
        let b = data::batches(&order, size);
        prop_assert_eq!(b.len(), n.div_ceil(size));
        prop_assert!(b[..b.len() - 1].iter().all(|x| x.len() == size));
        let mut seen = vec![0u32; n];
        for i in b.iter().flatten() {
            seen[*i] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }
}
