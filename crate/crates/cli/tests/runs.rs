mod common;

use common::{blobs, tiny};
use prer::record::{Checkpoint, PhaseTimer, RunRecord};
use prer::runner::{run_experiment, run_seeds, with_strategy, RunOptions};
use prer_core::data::TaskStream;
use prer_core::pipeline::{Learner, Phase, Strategy};

fn metrics(r: &RunRecord) -> (Vec<Vec<u64>>, u64, Option<u64>) {
    let bits = r.results.iter().map(|row| row.iter().map(|v| v.to_bits()).collect()).collect();
    (bits, r.accuracy.to_bits(), r.bwt.map(f64::to_bits))
}

#[test]
fn record_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        out: Some(dir.path().to_path_buf()),
        checkpoint: false,
        resume: false,
    };
    let record = run_experiment(&tiny(), 3, &opts).unwrap();
    let path = dir.path().join(RunRecord::file_name(Strategy::Prer, 3));
    let back = RunRecord::load(&path).unwrap();
    assert_eq!(back, record);
    assert_eq!(metrics(&back), metrics(&record));

    assert_eq!(record.results.len(), 3);
    assert_eq!(record.tasks.len(), 3);
    assert!(record.tasks.iter().all(|t| t.coverage.is_some() && t.flow_epochs.is_some()));
    assert!(record.tasks[0].quality.is_none());
    assert!(record.tasks[1..].iter().all(|t| t.quality_at_generation.is_some()));
    let r = record.result_matrix().unwrap();
    assert_eq!(record.accuracy, r.accuracy().unwrap());
    assert_eq!(record.bwt, Some(r.bwt().unwrap()));
    for phase in [Phase::Classifier, Phase::Autoencoder, Phase::Flow, Phase::Evaluation] {
        assert_eq!(record.timings.iter().filter(|t| t.phase == phase).count(), 3, "{phase:?}");
    }
    assert!(record.phase_seconds(Phase::Classifier) > 0.0);
}

#[test]
fn single_task_naive_run_has_no_bwt() {
    let mut cfg = with_strategy(&tiny(), Strategy::Naive);
    cfg.dataset = "blobs:classes=2,dim=4,sep=4,per_class=40".into();
    let r = run_experiment(&cfg, 1, &RunOptions::default()).unwrap();
    assert_eq!(r.results.len(), 1);
    assert_eq!(r.bwt, None);
    assert_eq!(r.accuracy, r.results[0][0]);
    assert_eq!(r.memory_floats, 0);
    assert!(r.tasks[0].flow_epochs.is_none());
}

#[test]
fn reruns_reproduce_metrics() {
    for strategy in Strategy::ALL {
        let cfg = with_strategy(&tiny(), strategy);
        let a = run_experiment(&cfg, 5, &RunOptions::default()).unwrap();
        let b = run_experiment(&cfg, 5, &RunOptions::default()).unwrap();
        assert_eq!(metrics(&a), metrics(&b), "{strategy}");
        assert_eq!(a.tasks, b.tasks, "{strategy}");
        assert_eq!(a.config_hash, b.config_hash);
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = tiny();
    let one = run_seeds(&cfg, &[1, 2, 3], Some(1), &RunOptions::default()).unwrap();
    let three = run_seeds(&cfg, &[1, 2, 3], Some(3), &RunOptions::default()).unwrap();
    assert_eq!(one.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
    for (a, b) in one.iter().zip(&three) {
        assert_eq!(metrics(a), metrics(b));
    }
}

#[test]
fn resumed_run_matches_an_uninterrupted_one() {
    let cfg = tiny();
    let seed = 4;
    let full = run_experiment(&cfg, seed, &RunOptions::default()).unwrap();

    // Stop after the first task, as an interrupted run would.
    let dir = tempfile::tempdir().unwrap();
    let set = cfg.dataset_spec().unwrap().load(seed).unwrap();
    let stream = TaskStream::build(&set, cfg.classes_per_task, seed).unwrap();
    let mut learner = Learner::new(
        cfg.strategy,
        cfg.train.clone(),
        cfg.model(&stream.sample_shape, stream.total_classes),
        cfg.topology(),
        seed,
    )
    .unwrap();
    let mut timer = PhaseTimer::default();
    let first = learner.step(&stream, &mut timer).unwrap();
    let path = Checkpoint::path(dir.path(), cfg.strategy, seed);
    Checkpoint {
        config_hash: cfg.hash(),
        learner,
        outcomes: vec![first],
        timings: timer.timings,
    }
    .save(&path)
    .unwrap();

    let opts = RunOptions {
        out: Some(dir.path().to_path_buf()),
        checkpoint: true,
        resume: true,
    };
    let resumed = run_experiment(&cfg, seed, &opts).unwrap();
    assert_eq!(metrics(&resumed), metrics(&full));
    assert_eq!(resumed.tasks, full.tasks);
    assert_eq!(Checkpoint::load(&path).unwrap().learner.completed, 3);

    let mut other = cfg.clone();
    other.train.beta = 0.5;
    assert!(run_experiment(&other, seed, &opts).is_err());
}

#[test]
fn training_failures_name_the_task_and_phase() {
    let mut cfg = with_strategy(&tiny(), Strategy::Naive);
    cfg.train.learning_rate = 1e300;
    let err = run_experiment(&cfg, 1, &RunOptions::default()).unwrap_err();
    let text = err.to_string();
    assert!(text.starts_with("naive seed 1, task 0, classifier phase"), "{text}");
}

/// Paired-seed comparison on the desk blobs stream: PRER must beat Naive on
/// both Accuracy and BWT in at least four of five seeds.
#[test]
fn prer_beats_naive_on_paired_seeds() {
    let cfg = blobs();
    let opts = RunOptions::default();
    let prer = run_seeds(&with_strategy(&cfg, Strategy::Prer), &cfg.seeds, None, &opts).unwrap();
    let naive = run_seeds(&with_strategy(&cfg, Strategy::Naive), &cfg.seeds, None, &opts).unwrap();
    let wins = prer
        .iter()
        .zip(&naive)
        .filter(|(p, n)| p.accuracy > n.accuracy && p.bwt.unwrap() > n.bwt.unwrap())
        .count();
    let summary: Vec<_> = prer
        .iter()
        .zip(&naive)
        .map(|(p, n)| (p.seed, p.accuracy, n.accuracy, p.bwt.unwrap(), n.bwt.unwrap()))
        .collect();
    assert!(wins >= 4, "PRER won {wins}/5 seeds: {summary:?}");
}
