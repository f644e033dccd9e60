use bifta::archive::EmbeddingArchive;
use bifta::config::{DrStrategy, ExperimentConfig, Mode, ViewSource, VrStrategy};
use bifta::experiment::{run_experiment, Prediction, RunOptions};
use bifta::fixture::{build_dataset, FixtureSpec};
use bifta::manifest::{ClassEntry, Dataset, DatasetManifest, DescriptionRow, ImageEntry, MANIFEST_FORMAT_VERSION};
use bifta::sweep::{parse_axis, sweep};
use bifta_core::Source;

fn predictions(cfg: &ExperimentConfig, ds: &Dataset) -> Vec<Prediction> {
    run_experiment(cfg, ds, RunOptions { timing: false, predictions: true }).unwrap().predictions
}

fn score_bits(p: &[Prediction]) -> Vec<Vec<(String, u64)>> {
    p.iter().map(|p| p.ranked.iter().map(|r| (r.label.clone(), r.wca.to_bits())).collect()).collect()
}

#[test]
fn no_vr_without_dr_is_wca_bit_for_bit() {
    let ds = build_dataset(&FixtureSpec::redundancy()).unwrap();
    let seeds = vec![0, 5];
    let wca = ExperimentConfig { mode: Mode::Wca, seeds: seeds.clone(), ..Default::default() };
    let ablated =
        ExperimentConfig { mode: Mode::BiftaNoVr, dr_strategy: DrStrategy::None, seeds, ..Default::default() };
    assert_eq!(score_bits(&predictions(&wca, &ds)), score_bits(&predictions(&ablated, &ds)));
}

#[test]
fn repeated_seed_repeats_accuracy() {
    let ds = build_dataset(&FixtureSpec::redundancy()).unwrap();
    let cfg = ExperimentConfig { seeds: vec![4, 4], ..Default::default() };
    let r = run_experiment(&cfg, &ds, RunOptions::default()).unwrap().report;
    assert_eq!(r.per_seed_accuracy[0], r.per_seed_accuracy[1]);
    assert_eq!(r.std, 0.0);
    assert_eq!(r.mean, r.per_seed_accuracy[0]);
}

#[test]
fn accuracies_are_fractions() {
    let ds = build_dataset(&FixtureSpec::redundancy()).unwrap();
    for mode in [Mode::Bifta, Mode::ClipE, Mode::DescAvg] {
        let cfg = ExperimentConfig { mode, seeds: vec![0, 1, 2], ..Default::default() };
        let r = run_experiment(&cfg, &ds, RunOptions::default()).unwrap().report;
        for a in r.per_seed_accuracy.iter().chain(r.per_class_accuracy.iter().map(|c| &c.accuracy)) {
            assert!((0.0..=1.0).contains(a));
        }
        let (m, _) = bifta::experiment::mean_std(&r.per_seed_accuracy);
        assert_eq!(m, r.mean);
    }
}

/// Two classes on the axes; every image embedding equals its class prompt.
fn prompt_copy_dataset() -> Dataset {
    let mut texts = EmbeddingArchive::new(2, true);
    let mut images = EmbeddingArchive::new(2, true);
    let mut classes = Vec::new();
    let mut entries = Vec::new();
    for (c, e) in [[1.0f32, 0.0], [0.0, 1.0]].iter().enumerate() {
        let label = format!("c{c}");
        let prompt_row = texts.push(format!("p{c}"), e).unwrap();
        let d = texts.push(format!("d{c}"), e).unwrap();
        classes.push(ClassEntry {
            label: label.clone(),
            prompt: format!("This is a photo of a {label}."),
            prompt_row,
            extra_prompt_rows: vec![],
            description_rows: vec![DescriptionRow { row: d, text: format!("d{c}"), source: Source::Cupl }],
        });
        for i in 0..3 {
            let id = format!("{label}_{i}");
            let full_row = images.push(id.clone(), e).unwrap();
            entries.push(ImageEntry { id, truth_label: label.clone(), full_row, patch_rows: vec![] });
        }
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        image_archive: "images".into(),
        text_archive: "texts".into(),
        classes,
        images: entries,
        synthetic: None,
    };
    Dataset::new(manifest, images, texts).unwrap().validated().unwrap()
}

#[test]
fn clip_on_prompt_copies_is_perfect() {
    let ds = prompt_copy_dataset();
    for mode in [Mode::Clip, Mode::ClipE, Mode::DescAvg] {
        let cfg = ExperimentConfig { mode, ..Default::default() };
        assert_eq!(run_experiment(&cfg, &ds, RunOptions::default()).unwrap().report.mean, 1.0);
    }
}

#[test]
fn view_modes_without_pool_fail_on_real_data() {
    let ds = prompt_copy_dataset();
    let cfg = ExperimentConfig { mode: Mode::Bifta, ..Default::default() };
    assert!(run_experiment(&cfg, &ds, RunOptions::default()).is_err());
    let cfg = ExperimentConfig { view_source: ViewSource::Oracle, ..Default::default() };
    assert!(matches!(run_experiment(&cfg, &ds, RunOptions::default()), Err(bifta::Error::Config(_))));
}

#[test]
fn source_filter_can_empty_a_pool() {
    let ds = prompt_copy_dataset();
    let cfg = ExperimentConfig { mode: Mode::DescAvg, sources: vec![Source::DistAttr], ..Default::default() };
    assert!(matches!(run_experiment(&cfg, &ds, RunOptions::default()), Err(bifta::Error::Data(_))));
}

#[test]
fn eta_sweep_falls_back_only_at_tiny_threshold() {
    let ds = build_dataset(&FixtureSpec::redundancy()).unwrap();
    let rows = sweep(&ExperimentConfig::default(), &[parse_axis("eta=0.05,0.80,1.0").unwrap()], &ds).unwrap();
    assert_eq!(rows.len(), 3);
    let fb: Vec<usize> = rows.iter().map(|r| r.outcome.as_ref().unwrap().fallback.total_fallback).collect();
    assert!(fb[0] > 0 && fb[1] == 0 && fb[2] == 0, "{fb:?}");
}

#[test]
fn empty_sweep_is_one_run() {
    let ds = build_dataset(&FixtureSpec::separable()).unwrap();
    let base = ExperimentConfig { capacity: 8, ..Default::default() };
    let rows = sweep(&base, &[], &ds).unwrap();
    assert_eq!(rows.len(), 1);
    let direct = run_experiment(&base, &ds, RunOptions::default()).unwrap().report;
    assert_eq!(rows[0].outcome.as_ref().unwrap(), &direct);
}

#[test]
fn finer_grids_do_not_help_on_the_redundancy_fixture() {
    let ds = build_dataset(&FixtureSpec::redundancy()).unwrap();
    let acc: Vec<f64> = (3..=5)
        .map(|g| {
            let cfg = ExperimentConfig { vr_strategy: VrStrategy::Grid(g), ..Default::default() };
            run_experiment(&cfg, &ds, RunOptions::default()).unwrap().report.mean
        })
        .collect();
    assert!(acc.windows(2).all(|w| w[1] <= w[0]), "{acc:?}");
}

#[test]
fn bifta_beats_wca_under_redundancy() {
    let ds = build_dataset(&FixtureSpec::redundancy()).unwrap();
    let run = |mode| {
        let cfg = ExperimentConfig { mode, seeds: (0..10).collect(), ..Default::default() };
        run_experiment(&cfg, &ds, RunOptions::default()).unwrap().report
    };
    let (b, w) = (run(Mode::Bifta), run(Mode::Wca));
    assert!(b.mean > w.mean);
    let wins = b.per_seed_accuracy.iter().zip(&w.per_seed_accuracy).filter(|(x, y)| x >= y).count();
    assert!(wins >= 8);
}

#[test]
fn tfidf_refinement_runs_end_to_end() {
    let ds = build_dataset(&FixtureSpec::redundancy()).unwrap();
    let cfg = ExperimentConfig { dr_strategy: DrStrategy::Tfidf, ..Default::default() };
    let r = run_experiment(&cfg, &ds, RunOptions::default()).unwrap().report;
    assert!(r.mean > 0.5);
}
