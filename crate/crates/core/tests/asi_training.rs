use lamsc::asi::{train_asi, AsiHyper, AttentionLayout, ExperienceBase};
use lamsc::dataset::{synth, VocDataset, VOC_CLASSES};
use lamsc::skb::{segment, Backend, OracleBackend, SegmentSet};

fn segment_sets(n: usize, k_max: usize) -> Vec<SegmentSet> {
    let dir = tempfile::tempdir().unwrap();
    let stems = synth::write_dataset(dir.path(), n, 32, 32, 11).unwrap();
    let ds = VocDataset::open(dir.path(), Some((32, 32))).unwrap();
    let backend = Backend::Oracle(OracleBackend::new(ds.clone(), 0.25));
    stems.iter().map(|s| segment(&ds.load_image(s).unwrap(), &backend, k_max).unwrap()).collect()
}

#[test]
fn select_everything_base_is_learned() {
    let k_max = 4;
    let sets = segment_sets(200, k_max);
    let every_label: Vec<String> = VOC_CLASSES.iter().map(|s| s.to_string()).collect();
    let base = ExperienceBase::from_interest(&sets, &every_label, k_max).unwrap();
    assert_eq!(base.len(), 200);
    let init = AttentionLayout::new(k_max, 3).init(3);
    let hyper = AsiHyper { lr: 1e-2, epochs: 20, batch: 16, seed: 3 };
    let (_, losses) = train_asi(&base, &init, &hyper).unwrap();
    let (first, last) = (losses[0], *losses.last().unwrap());
    assert!(last < 0.5 * first, "loss {first} -> {last}");
    assert!(losses.iter().all(|l| l.is_finite()));
}

#[test]
fn single_record_loss_does_not_increase() {
    let k_max = 4;
    let sets = segment_sets(1, k_max);
    let base = ExperienceBase::from_interest(&sets, &["person".into(), "car".into()], k_max).unwrap();
    assert_eq!(base.len(), 1);
    let init = AttentionLayout::new(k_max, 3).init(9);
    let hyper = AsiHyper { lr: 1e-3, epochs: 50, batch: 1, seed: 9 };
    let (_, losses) = train_asi(&base, &init, &hyper).unwrap();
    for w in losses.windows(2) {
        assert!(w[1] <= w[0], "loss rose: {} -> {}", w[0], w[1]);
    }
    assert!(losses.last().unwrap() < &losses[0]);
}
