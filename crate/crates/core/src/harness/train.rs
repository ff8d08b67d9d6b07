//! Meta-training and meta-test loops.

use std::time::Instant;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{TrainConfig, Variant};
use super::metrics::{EvalSummary, MetricsEvent, MetricsRecord, ValidationPoint};
use super::model::ModelParams;
use super::optimizer::{optimizer_step, OptimizerState};
use super::pipeline::{episode_accuracy, episode_forward, first_step_embeddings, CeTerm, GraphContext};
use crate::autodiff::Tape;
use crate::encoder::Dropout;
use crate::episodes::{stream, substream, EpisodeStream, MetaTask, Role, TaskShape};
use crate::error::{Result, TentError};
use crate::graph::{ClassSplit, Graph};

/// Seed of the parameter initializer for a run seed.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    substream(seed, stream::INIT, 0, Role::ClassDraw)
}

pub fn init_model(g: &Graph, split: &ClassSplit, cfg: &TrainConfig) -> Result<ModelParams> {
    ModelParams::init(g.feature_dim(), cfg.hidden_dim, cfg.out_dim, cfg.dropout, &split.base, &mut init_rng(cfg.seed))
}

/// Loss values and gradients (in group order) of one training episode.
pub struct StepOutcome {
    pub loss: f64,
    pub matching_loss: f64,
    pub ce_loss: Option<f64>,
    pub grads: Vec<Vec<f64>>,
}

/// Forward and backward pass of a single meta-training episode.
pub fn train_episode(
    model: &ModelParams,
    ctx: &GraphContext<'_>,
    task: &MetaTask,
    variant: Variant,
    gamma: f64,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let vars = model.to_tape(&mut tape);
    let mut dropout = dropout_rng.map(|rng| Dropout {
        rate: model.config.dropout,
        rng,
    });
    let h = first_step_embeddings(&mut tape, &vars, model, ctx, dropout.as_mut())?;
    let ev = episode_forward(&mut tape, &vars, model, ctx.graph, h, task, variant, dropout.as_mut(), Some(CeTerm { gamma }))?;
    let loss = tape.scalar(ev.loss);
    if !loss.is_finite() {
        return Err(TentError::Numeric(format!("episode loss is {loss}")));
    }
    let grads = tape.backward(ev.loss);
    Ok(StepOutcome {
        loss,
        matching_loss: tape.scalar(ev.matching_loss),
        ce_loss: ev.ce_loss.map(|v| tape.scalar(v)),
        grads: vars.as_array().iter().map(|&v| grads.flat(v)).collect(),
    })
}

/// Eval-mode first-step embeddings, shared by every task of an evaluation
/// (no parameter changes happen in between).
pub fn frozen_embeddings(model: &ModelParams, ctx: &GraphContext<'_>) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let vars = model.to_tape(&mut tape);
    let h = first_step_embeddings(&mut tape, &vars, model, ctx, None)?;
    Ok(tape.value(h).clone())
}

/// Per-query accuracy of one task using precomputed embeddings.
pub fn eval_task(model: &ModelParams, graph: &Graph, h: &Array2<f64>, task: &MetaTask, variant: Variant) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = model.to_tape(&mut tape);
    let hv = tape.leaf(h.clone());
    let ev = episode_forward(&mut tape, &vars, model, graph, hv, task, variant, None, None)?;
    Ok(episode_accuracy(&tape, &ev, task))
}

/// Accuracy over `tasks`, evaluated in parallel and reduced in task order.
pub fn evaluate_tasks(model: &ModelParams, ctx: &GraphContext<'_>, tasks: &[MetaTask], variant: Variant) -> Result<EvalSummary> {
    let h = frozen_embeddings(model, ctx)?;
    let accs = tasks
        .par_iter()
        .map(|t| eval_task(model, ctx.graph, &h, t, variant))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSummary::from_accuracies(accs, tasks))
}

/// Meta-test on `count` novel-class tasks from the seed's test stream.
pub fn meta_eval(model: &ModelParams, g: &Graph, novel: &[usize], shape: TaskShape, seed: u64, count: usize, variant: Variant) -> Result<EvalSummary> {
    if count == 0 {
        return Err(TentError::Argument("T_test must be at least 1".into()));
    }
    let tasks = EpisodeStream::new(g, novel, shape, seed, stream::TEST).take(count)?;
    evaluate_tasks(model, &GraphContext::new(g), &tasks, variant)
}

/// Output of [`meta_train`].
pub struct TrainOutcome {
    /// Parameters with the best validation accuracy.
    pub model: ModelParams,
    /// Parameters after the last episode.
    pub final_model: ModelParams,
    pub record: MetricsRecord,
    pub events: Vec<MetricsEvent>,
}

/// Episodic meta-training: one sampled base-class task and one Adam step per
/// epoch, validation on a fixed validation-class stream every
/// `validation_every` epochs (plus before training and after the last
/// epoch), keeping the best-validation parameters.
pub fn meta_train(g: &Graph, split: &ClassSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    split.validate(g)?;
    let started = Instant::now();
    let variant = cfg.variant;
    let ctx = GraphContext::new(g);
    let mut model = init_model(g, split, cfg)?;
    let mut opt = OptimizerState::new(&model);
    let train_stream = EpisodeStream::new(g, &split.base, cfg.episodes.train_shape(), cfg.seed, stream::TRAIN);
    let val_tasks = EpisodeStream::new(g, &split.val, cfg.episodes.test_shape(), cfg.seed, stream::VALIDATION).take(cfg.validation_tasks)?;

    let mut events = Vec::new();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut validation = Vec::new();
    let mut best = (0usize, f64::NEG_INFINITY, model.clone());

    let mut validate = |epoch: usize, model: &ModelParams, events: &mut Vec<MetricsEvent>| -> Result<()> {
        let acc = evaluate_tasks(model, &ctx, &val_tasks, variant)?.mean;
        validation.push(ValidationPoint { epoch, accuracy: acc });
        events.push(MetricsEvent::Validation { epoch, accuracy: acc });
        if acc > best.1 {
            best = (epoch, acc, model.clone());
        }
        Ok(())
    };
    validate(0, &model, &mut events)?;

    for epoch in 1..=cfg.epochs {
        let abort = |e: TentError| TentError::Aborted {
            epoch,
            source: Box::new(e),
        };
        let task = train_stream.task(epoch - 1).map_err(abort)?;
        let mut rng = substream(cfg.seed, stream::TRAIN, (epoch - 1) as u64, Role::Dropout);
        let step = train_episode(&model, &ctx, &task, variant, cfg.gamma, Some(&mut rng)).map_err(abort)?;
        optimizer_step(&mut model, &step.grads, &mut opt, cfg.learning_rate, cfg.weight_decay).map_err(abort)?;
        losses.push(step.loss);
        events.push(MetricsEvent::Train {
            epoch,
            loss: step.loss,
            matching_loss: step.matching_loss,
            ce_loss: step.ce_loss,
        });
        if epoch % cfg.validation_every == 0 || epoch == cfg.epochs {
            validate(epoch, &model, &mut events).map_err(abort)?;
        }
    }

    let (best_epoch, best_acc, best_model) = best;
    let test = meta_eval(&best_model, g, &split.novel, cfg.episodes.test_shape(), cfg.seed, cfg.test_tasks, variant)?;
    events.push(MetricsEvent::Test {
        accuracy_mean: test.mean,
        accuracy_std: test.std,
        tasks: test.tasks,
    });
    let wall = started.elapsed().as_secs_f64();
    events.push(MetricsEvent::Timing { wall_clock_secs: wall });
    let record = MetricsRecord {
        variant,
        seed: cfg.seed,
        config_fingerprint: cfg.fingerprint(),
        epochs_run: cfg.epochs,
        train_losses: losses,
        validation,
        best_epoch,
        best_validation_accuracy: Some(best_acc),
        test_accuracy_mean: test.mean,
        test_accuracy_std: test.std,
        test_tasks: test.tasks,
        test_stream_fingerprint: test.stream_fingerprint,
        wall_clock_secs: wall,
    };
    Ok(TrainOutcome {
        model: best_model,
        final_model: model,
        record,
        events,
    })
}

/// Trains and evaluates `variant` with every other setting from `cfg`.
pub fn run_variant(variant: Variant, g: &Graph, split: &ClassSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        variant,
        ..cfg.clone()
    };
    meta_train(g, split, &cfg)
}

/// Evaluation-only record for an existing model.
pub fn eval_record(model: &ModelParams, g: &Graph, split: &ClassSplit, cfg: &TrainConfig) -> Result<MetricsRecord> {
    let started = Instant::now();
    let test = meta_eval(model, g, &split.novel, cfg.episodes.test_shape(), cfg.seed, cfg.test_tasks, cfg.variant)?;
    Ok(MetricsRecord {
        variant: cfg.variant,
        seed: cfg.seed,
        config_fingerprint: cfg.fingerprint(),
        epochs_run: 0,
        train_losses: Vec::new(),
        validation: Vec::new(),
        best_epoch: 0,
        best_validation_accuracy: None,
        test_accuracy_mean: test.mean,
        test_accuracy_std: test.std,
        test_tasks: test.tasks,
        test_stream_fingerprint: test.stream_fingerprint,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Every `(variant, seed)` combination, trained in parallel. Results are in
/// `variants × seeds` order. Within a seed every variant sees the same
/// task streams.
pub fn run_ablation(g: &Graph, split: &ClassSplit, cfg: &TrainConfig, variants: &[Variant], seeds: &[u64]) -> Result<Vec<TrainOutcome>> {
    let jobs: Vec<(Variant, u64)> = variants.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            let cfg = TrainConfig {
                variant,
                seed,
                ..cfg.clone()
            };
            meta_train(g, split, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    for seed in seeds {
        let mut prints = outcomes
            .iter()
            .filter(|o| o.record.seed == *seed)
            .map(|o| &o.record.test_stream_fingerprint);
        if let Some(first) = prints.next() {
            if prints.any(|p| p != first) {
                return Err(TentError::Integrity(format!("variants saw different test streams for seed {seed}")));
            }
        }
    }
    Ok(outcomes)
}
