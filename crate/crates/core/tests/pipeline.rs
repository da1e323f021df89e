use ecgid_core::cohort::{
    build_inter_pairs, build_intra_pairs, cap_exams_per_patient, drop_sparse_patients, filter_categorical, read_exams,
    refine_multi_exam, split_by_patient, write_exams, ColumnSchema, PairLabel, PairSet, Split, SplitFractions,
    SplitManifest,
};
use ecgid_core::embedding::EmbeddingSet;
use ecgid_core::identify::{evaluate_closed_set, GallerySpec, GalleryStrategy};
use ecgid_core::learn::{embed_table, fit_norm_stats, train, Checkpoint, LossKind, NormMode, TrainConfig};
use ecgid_core::openset::{build_protocol, evaluate_openset, FusionKind, ProtocolSizes};
use ecgid_core::synthgen::{generate_cohort, SynthParams, PRIMARY_DEVICE};
use ecgid_core::verify::{accumulate_all_pairs, VerificationReport};
use std::collections::BTreeSet;
use std::io::BufReader;

fn cohort() -> ecgid_core::cohort::ExamTable {
    let params = SynthParams {
        n_patients: 240,
        exams_per_patient: (3, 6),
        off_device_fraction: 0.1,
        seed: 11,
        ..SynthParams::default()
    };
    generate_cohort(&params).unwrap().table
}

#[test]
fn library_pipeline_end_to_end() {
    let raw = cohort();
    let refined = refine_multi_exam(&raw, 2, 30);
    let capped = drop_sparse_patients(&cap_exams_per_patient(&refined, 10, 11).unwrap(), 2);
    let table = drop_sparse_patients(&filter_categorical(&capped, "Device", &[PRIMARY_DEVICE.to_string()]), 2);
    assert!(table.records().iter().all(|r| r.attributes["Device"] == PRIMARY_DEVICE));
    assert!(table.by_patient().values().all(|v| v.len() >= 2));

    let manifest = split_by_patient(&table, SplitFractions { train: 0.6, val: 0.2, test: 0.2 }, 2, 11).unwrap();
    let parts: Vec<_> = Split::ALL.iter().map(|&s| manifest.subset(&table, s)).collect();
    assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), table.len());
    let ids: Vec<BTreeSet<String>> =
        parts.iter().map(|p| p.records().iter().map(|r| r.patient_id.clone()).collect()).collect();
    assert!(ids[0].is_disjoint(&ids[1]) && ids[0].is_disjoint(&ids[2]) && ids[1].is_disjoint(&ids[2]));

    let intra = build_intra_pairs(&table, (6.0, 18.0)).unwrap();
    let inter = build_inter_pairs(&intra, &table, 11).unwrap();
    assert_eq!(intra.len(), inter.len());
    assert!(intra.pairs.iter().all(|p| p.label == PairLabel::Intra && p.patient_a == p.patient_b));
    assert!(inter.pairs.iter().all(|p| p.label == PairLabel::Inter && p.patient_a != p.patient_b));

    let (tr, va, te) = (&parts[0], &parts[1], &parts[2]);
    let norm = fit_norm_stats(tr, NormMode::TrainGlobal).unwrap();
    let cfg = TrainConfig { loss: LossKind::Triplet, epochs: 4, seed: 11, ..TrainConfig::default() };
    let out = train(&cfg, tr, va, &norm).unwrap();
    assert_eq!(out.log.len(), 4);

    let set = embed_table(&out.params, te, &norm).unwrap();
    set.check_unit_norm().unwrap();
    assert_eq!(set.len(), te.len());

    let h = accumulate_all_pairs(&set, 1 << 16, 64).unwrap();
    let n = set.len() as u64;
    assert_eq!(h.n_genuine + h.n_impostor, n * (n - 1) / 2);
    let report = VerificationReport::from_histograms(&h, &[1e-2, 1e-3]).unwrap();
    assert!((0.0..=1.0).contains(&report.eer));

    let (summary, curve) =
        evaluate_closed_set(&set, GallerySpec { strategy: GalleryStrategy::RandomSingle, seed: 11 }).unwrap();
    assert_eq!(curve.values.last().copied(), Some(1.0));
    assert!(summary.rank1 <= summary.rank5 && summary.rank5 <= summary.rank10);

    let pool = embed_table(&out.params, tr, &norm).unwrap();
    let sizes = ProtocolSizes { gallery: 12, known_probes: 10, impostor_probes: 20 };
    let protocol = build_protocol(&set, &pool, sizes, 60, 5, 11).unwrap();
    let open = evaluate_openset(&protocol, &FusionKind::ALL, &[0.1, 0.05]).unwrap();
    assert_eq!(open.rows.len(), 6);
}

#[test]
fn artifacts_round_trip_through_files() {
    let table = cohort();
    let mut buf = Vec::new();
    write_exams(&table, &mut buf, &["note".to_string()]).unwrap();
    let back = read_exams(&buf[..], &ColumnSchema::default()).unwrap();
    assert!(back.rejected.is_empty());
    assert_eq!(back.header_comments, vec!["note".to_string()]);
    assert_eq!(back.table, table);

    let manifest = split_by_patient(&table, SplitFractions { train: 0.7, val: 0.15, test: 0.15 }, 3, 2).unwrap();
    let mut buf = Vec::new();
    manifest.write_to(&mut buf, &[]).unwrap();
    assert_eq!(SplitManifest::read_from(BufReader::new(&buf[..])).unwrap(), manifest);

    let intra = build_intra_pairs(&table, (6.0, 18.0)).unwrap();
    let inter = build_inter_pairs(&intra, &table, 2).unwrap();
    for pairs in [intra, inter] {
        let mut buf = Vec::new();
        pairs.write_to(&mut buf, &[]).unwrap();
        assert_eq!(PairSet::read_from(BufReader::new(&buf[..])).unwrap().pairs, pairs.pairs);
    }

    let train_part = manifest.subset(&table, Split::Train);
    let norm = fit_norm_stats(&train_part, NormMode::TrainGlobal).unwrap();
    let cfg = TrainConfig { loss: LossKind::Arcface, epochs: 2, seed: 2, ..TrainConfig::default() };
    let out = train(&cfg, &train_part, &manifest.subset(&table, Split::Val), &norm).unwrap();
    let ck = Checkpoint::new(cfg, norm.clone(), &out);
    let mut buf = Vec::new();
    ck.write_to(&mut buf).unwrap();
    let loaded = Checkpoint::read_from(&buf[..]).unwrap();
    assert_eq!(loaded, ck);

    let set = embed_table(&loaded.params, &manifest.subset(&table, Split::Test), &loaded.norm).unwrap();
    let mut buf = Vec::new();
    set.write_to(&mut buf, &[("k".into(), "v".into())]).unwrap();
    let (back, meta) = EmbeddingSet::read_from(BufReader::new(&buf[..])).unwrap();
    assert_eq!(back, set);
    assert_eq!(meta, vec![("k".to_string(), "v".to_string())]);
}
