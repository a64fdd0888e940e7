//! Trainer contracts: frozen base, warmup, optimizer recurrence, stage two, ablation bookkeeping.

use std::collections::BTreeMap;

use vora::data::{heldout, DataConfig, Vocab};
use vora::distill::DistillMode;
use vora::model::{MaskMode, Model, ModelConfig, ParamStore};
use vora::train::{
    adamw_step, eval_metrics, finetune, pretrain, run_ablation, steps_to_threshold, to_csv, AblationCell, AblationConfig,
    AdamW, DataSource, OptimState, TrainConfig, TrainMode,
};
use vora::vision::Teacher;
use vora::{Tensor, VoraError};

fn micro() -> ModelConfig {
    ModelConfig::micro(Vocab::standard().len())
}

fn small_run(steps: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        warmup_steps: 5,
        batch_size: 4,
        total_steps: steps,
        ..TrainConfig::default()
    }
}

fn stream() -> DataSource {
    DataSource::Stream(DataConfig::default())
}

fn snapshot(p: &ParamStore) -> BTreeMap<String, Tensor> {
    p.iter().map(|(n, t)| (n.clone(), t.clone())).collect()
}

#[test]
fn zero_steps_changes_nothing() {
    let mut m = Model::init(micro(), 0).unwrap();
    let teacher = Teacher::init(&micro(), 0).unwrap();
    let cfg = TrainConfig {
        total_steps: 0,
        ..TrainConfig::default()
    };
    let out = pretrain(&mut m, Some(&teacher), &stream(), &cfg, None).unwrap();
    assert!(out.state.history.is_empty());
    let before = snapshot(&m.params);
    let out = pretrain(&mut m, Some(&teacher), &stream(), &cfg, None).unwrap();
    assert_eq!(out.state.step, 0);
    for (n, t) in &before {
        assert!(t.bit_eq(m.params.get(n).unwrap()), "{n}");
    }
}

#[test]
fn base_stays_frozen_while_everything_else_moves() {
    let mut m = Model::init(micro(), 1).unwrap();
    let teacher = Teacher::init(&micro(), 1).unwrap();
    let base = snapshot(&m.params);
    let mut log = Vec::new();
    let out = pretrain(&mut m, Some(&teacher), &stream(), &small_run(50), Some(&mut log)).unwrap();
    assert_eq!(out.state.history.len(), 50);
    for (n, t) in m.params.iter() {
        if n.starts_with("llm.") {
            assert!(t.bit_eq(&base[n]), "{n} moved");
        } else if let Some(b) = base.get(n) {
            assert!(!t.bit_eq(b), "{n} did not move");
        }
    }
    // adapters and heads were attached by pretrain; b started at zero
    for (n, t) in m.params.with_prefix("lora.") {
        if n.ends_with(".b") {
            assert!(t.data().iter().any(|&v| v != 0.0), "{n} still zero");
        }
    }
    assert_eq!(m.aux_blocks(), vec![0, 1, 2, 3]);
    let lines: Vec<serde_json::Value> = String::from_utf8(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 50);
    assert_eq!(lines[7]["step"], 7);
    assert_eq!(lines[7]["per_block"].as_array().unwrap().len(), 4);
}

#[test]
fn warmup_ramps_learning_rate_linearly() {
    let mut m = Model::init(micro(), 2).unwrap();
    let cfg = TrainConfig {
        lr: 4e-3,
        warmup_steps: 4,
        batch_size: 2,
        total_steps: 7,
        distill_mode: DistillMode::None,
        ..TrainConfig::default()
    };
    let out = pretrain(&mut m, None, &stream(), &cfg, None).unwrap();
    let lrs: Vec<f32> = out.state.history.iter().map(|h| h.lr).collect();
    assert_eq!(lrs, vec![0.0, 1e-3, 2e-3, 3e-3, 4e-3, 4e-3, 4e-3]);
}

#[test]
fn adamw_matches_hand_rolled_recurrence() {
    let mut params = ParamStore::new();
    params.insert("w", Tensor::new(vec![1], vec![1.0]).unwrap());
    params.insert("x.norm", Tensor::new(vec![1], vec![-2.0]).unwrap());
    let names: Vec<String> = params.names().cloned().collect();
    let mut state = OptimState::new(&params, names.iter()).unwrap();
    let opt = AdamW::default();
    let (lr, wd, b1, b2, eps) = (0.1f64, 0.01f64, 0.9f64, 0.999f64, 1e-8f64);
    let grads_seq = [(0.5f64, 0.25f64), (-0.3, 1.5)];

    // closed form for two steps, parameter `w` (decayed) and `x.norm` (not decayed)
    let (mut w, mut n) = (1.0f64, -2.0f64);
    let (mut mw, mut vw, mut mn, mut vn) = (0.0, 0.0, 0.0, 0.0);
    for (t, (gw, gn)) in grads_seq.iter().enumerate() {
        let t = t as i32 + 1;
        mw = b1 * mw + (1.0 - b1) * gw;
        vw = b2 * vw + (1.0 - b2) * gw * gw;
        mn = b1 * mn + (1.0 - b1) * gn;
        vn = b2 * vn + (1.0 - b2) * gn * gn;
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        w = w * (1.0 - lr * wd) - lr * (mw / c1) / ((vw / c2).sqrt() + eps);
        n -= lr * (mn / c1) / ((vn / c2).sqrt() + eps);
    }

    for (gw, gn) in grads_seq {
        let grads: BTreeMap<String, Tensor> = [
            ("w".to_string(), Tensor::new(vec![1], vec![gw as f32]).unwrap()),
            ("x.norm".to_string(), Tensor::new(vec![1], vec![gn as f32]).unwrap()),
        ]
        .into();
        adamw_step(&mut params, &mut state, &grads, lr as f32, &opt).unwrap();
    }
    assert!((params.get("w").unwrap().data()[0] as f64 - w).abs() <= 1e-7);
    assert!((params.get("x.norm").unwrap().data()[0] as f64 - n).abs() <= 1e-7);
    assert_eq!(state.t, 2);
}

#[test]
fn adamw_reports_the_missing_gradient() {
    let mut params = ParamStore::new();
    params.insert("w", Tensor::zeros(&[2]));
    let names: Vec<String> = params.names().cloned().collect();
    let mut state = OptimState::new(&params, names.iter()).unwrap();
    let err = adamw_step(&mut params, &mut state, &BTreeMap::new(), 0.1, &AdamW::default()).unwrap_err();
    assert!(matches!(err, VoraError::MissingGrad(ref n) if n == "w"), "{err}");
}

#[test]
fn finetune_merges_drops_heads_and_trains_the_llm() {
    let mut fresh = Model::init(micro(), 3).unwrap();
    assert!(matches!(
        finetune(&mut fresh, &stream(), &small_run(10), None),
        Err(VoraError::State(_))
    ));

    let mut m = Model::init(micro(), 3).unwrap();
    let teacher = Teacher::init(&micro(), 3).unwrap();
    pretrain(&mut m, Some(&teacher), &stream(), &small_run(10), None).unwrap();
    let mut merged_only = m.clone();
    merged_only.merge_lora().unwrap();
    let before = snapshot(&merged_only.params);

    let out = finetune(&mut m, &stream(), &small_run(10), None).unwrap();
    assert!(m.is_merged());
    assert!(!m.has_adapters());
    assert!(m.aux_blocks().is_empty());
    assert!(out.state.history.iter().all(|h| h.distill_loss.is_none()));
    assert!(out.state.history.iter().all(|h| h.total_loss == h.lm_loss));
    assert!(!m.params.get("llm.0.q").unwrap().bit_eq(&before["llm.0.q"]));
    assert!(!m.params.get("vision.fc1.w").unwrap().bit_eq(&before["vision.fc1.w"]));
    assert!(matches!(finetune(&mut m, &stream(), &small_run(10), None), Err(VoraError::State(_))));
}

#[test]
fn runs_are_deterministic() {
    let run = || {
        let mut m = Model::init(micro(), 4).unwrap();
        let teacher = Teacher::init(&micro(), 4).unwrap();
        let out = pretrain(&mut m, Some(&teacher), &stream(), &small_run(8), None).unwrap();
        (out.total_curve(), m.params.get("lora.0.q.b").unwrap().clone())
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert_eq!(a, b);
    assert!(ta.bit_eq(&tb));
}

#[test]
fn non_finite_loss_aborts_with_step() {
    let mut m = Model::init(micro(), 5).unwrap();
    m.params.get_mut("llm.lm_head").unwrap().data_mut()[0] = f32::NAN;
    let cfg = TrainConfig {
        distill_mode: DistillMode::None,
        ..small_run(10)
    };
    match pretrain(&mut m, None, &stream(), &cfg, None) {
        Err(VoraError::NumericAbort { step, .. }) => assert_eq!(step, 0),
        other => panic!("expected a numeric abort, got {other:?}"),
    }
}

#[test]
fn distilling_without_a_teacher_is_refused() {
    let mut m = Model::init(micro(), 6).unwrap();
    assert!(pretrain(&mut m, None, &stream(), &small_run(6), None).is_err());
}

#[test]
fn ablation_rows_match_a_scan_of_their_curves() {
    let base = Model::init(micro(), 7).unwrap();
    let teacher = Teacher::init(&micro(), 7).unwrap();
    let grid = AblationConfig {
        cells: [DistillMode::None, DistillMode::BlockWise]
            .into_iter()
            .map(|d| AblationCell {
                mask_mode: MaskMode::Hybrid,
                distill_mode: d,
                rank: 4,
            })
            .collect(),
        budget_steps: 12,
        thresholds: vec![5.0, 4.9, 0.1],
    };
    let cfg = TrainConfig {
        smooth_window: 3,
        ..small_run(12)
    };
    let (rows, curves) = run_ablation(&grid, &base, Some(&teacher), &stream(), &cfg).unwrap();
    let (rows2, _) = run_ablation(&grid, &base, Some(&teacher), &stream(), &cfg).unwrap();
    assert_eq!(rows, rows2);
    assert_eq!(rows.len(), 6);
    for row in &rows {
        let c = curves.iter().find(|c| c.cell == row.cell).unwrap();
        assert_eq!(c.lm_loss.len(), 12);
        // trailing mean, rebuilt here
        let smoothed: Vec<f32> = (0..12)
            .map(|i| {
                let lo = (i + 1usize).saturating_sub(3);
                let w = &c.lm_loss[lo..=i];
                (w.iter().map(|&v| v as f64).sum::<f64>() / w.len() as f64) as f32
            })
            .collect();
        for (a, b) in smoothed.iter().zip(&c.smoothed) {
            assert!((a - b).abs() <= 1e-6);
        }
        let scan = smoothed.iter().position(|&v| v <= row.threshold).map(|i| i + 1);
        assert_eq!(row.steps_to_threshold, scan);
        assert_eq!(steps_to_threshold(&c.smoothed, row.threshold), scan);
    }
    assert!(rows.iter().any(|r| r.threshold == 0.1 && r.steps_to_threshold.is_none()));
    let csv = to_csv(&rows);
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.lines().any(|l| l.starts_with("hybrid,block_wise,4,0.1,,")));
}

#[test]
fn untrained_text_perplexity_is_near_vocabulary_size() {
    let m = Model::init(micro(), 8).unwrap();
    let data = DataConfig {
        image_fraction: 0.0,
        ..DataConfig::default()
    };
    let held = heldout(8, 40, &data).unwrap();
    let metrics = eval_metrics(&m, None, &held, MaskMode::Hybrid).unwrap();
    let v = Vocab::standard().len() as f64;
    let ppl = metrics.text_perplexity.unwrap();
    assert!((ppl - v).abs() <= 0.2 * v, "perplexity {ppl} vs V {v}");
    assert!(metrics.caption_token_accuracy.is_none());
    assert_eq!(metrics.text_samples, 40);
}

#[test]
fn full_llm_mode_trains_the_base_and_reports_spikes() {
    let mut m = Model::init(micro(), 9).unwrap();
    let teacher = Teacher::init(&micro(), 9).unwrap();
    let before = m.params.get("llm.5.o").unwrap().clone();
    let cfg = TrainConfig {
        mode: TrainMode::FullLlmUnstable,
        ..small_run(12)
    };
    let out = pretrain(&mut m, Some(&teacher), &stream(), &cfg, None).unwrap();
    assert!(!m.params.get("llm.5.o").unwrap().bit_eq(&before));
    assert!(out.spikes.iter().all(|&s| s < 12));
}
