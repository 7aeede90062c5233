//! Synthetic learning task: a Gaussian-mixture classification dataset
//! sharded across devices, with multinomial logistic regression losses,
//! gradients, and constant estimators used by the round simulator.

use crate::rng::{self, StreamTree, SubRng};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Errors raised by task-level gradient operations.
#[derive(Debug, Error, PartialEq)]
pub enum TaskError {
    /// A mini-batch gradient was requested for an empty index list.
    #[error("mini-batch is empty")]
    EmptyBatch,
}

/// A labelled classification dataset partitioned into per-device shards.
///
/// Train samples are stored label-sorted, so each shard is a contiguous
/// block of indices covering at most two classes. All shards have equal
/// size. Test samples are held out and balanced across classes.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub class_means: Vec<Vec<f64>>,
    pub noise_scale: f64,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Per-device lists of train sample indices.
    pub shards: Vec<Vec<usize>>,
    pub test_features: Vec<Vec<f64>>,
    pub test_labels: Vec<usize>,
}

impl SyntheticTask {
    /// Number of model parameters: one weight vector plus a bias per class.
    pub fn model_dim(&self) -> usize {
        self.feature_dim * self.num_classes + self.num_classes
    }

    /// Number of train samples.
    pub fn num_train(&self) -> usize {
        self.features.len()
    }

    /// Shard size shared by every device.
    pub fn shard_size(&self) -> usize {
        self.shards.first().map_or(0, Vec::len)
    }
}

/// Summary statistics of one full pass over the train set at a fixed model.
#[derive(Debug, Clone)]
pub struct DeviceStat {
    /// Mean per-sample loss over the shard.
    pub shard_loss: f64,
    /// Trace of the per-sample gradient covariance over the shard.
    pub sigma2: f64,
    /// Mean squared norm of single-sample gradients over the shard.
    pub second_moment: f64,
}

/// Global loss, gradient, and per-device gradient statistics at one model.
#[derive(Debug, Clone)]
pub struct Survey {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub grad_norm2: f64,
    pub per_device: Vec<DeviceStat>,
}

/// Constants estimated from gradient probes: a smoothness estimate, a
/// uniform bound on stochastic gradient second moments, and per-device
/// gradient variances.
#[derive(Debug, Clone)]
pub struct ConstantEstimates {
    pub mu_hat: f64,
    pub phi_hat: f64,
    pub sigma2_hat: Vec<f64>,
}

/// Builds a deterministic Gaussian-mixture task.
///
/// Draws one mean per class, then `num_devices * shard_size` train samples
/// with exactly equal class counts, sorted by label so shards are contiguous
/// label blocks. Requires the total sample count to split evenly across
/// classes and each class block to be at least one shard long, which keeps
/// every shard inside at most two classes.
pub fn build_task(
    seed: u64,
    num_devices: usize,
    shard_size: usize,
    feature_dim: usize,
    num_classes: usize,
) -> SyntheticTask {
    assert!(num_devices >= 1, "need at least one device");
    assert!(shard_size >= 1, "need at least one sample per device");
    assert!(num_classes >= 2, "need at least two classes");
    assert!(feature_dim >= 1, "need at least one feature");
    let num_train = num_devices * shard_size;
    assert!(
        num_train % num_classes == 0,
        "train size {num_train} must divide evenly into {num_classes} classes"
    );
    let per_class = num_train / num_classes;
    assert!(
        per_class >= shard_size,
        "class blocks of {per_class} are shorter than shards of {shard_size}"
    );

    let tree = StreamTree::new(seed);
    let mut stream = tree.stream(&[rng::purpose::TASK]);
    let mean_scale = 3.0;
    let noise_scale = 1.0;

    let class_means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            (0..feature_dim)
                .map(|_| mean_scale * stream.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let draw_sample = |stream: &mut SubRng, label: usize| -> Vec<f64> {
        class_means[label]
            .iter()
            .map(|m| m + noise_scale * stream.sample::<f64, _>(StandardNormal))
            .collect()
    };

    let labels: Vec<usize> = (0..num_train).map(|j| j / per_class).collect();
    let features: Vec<Vec<f64>> = labels.iter().map(|&l| draw_sample(&mut stream, l)).collect();

    let shards: Vec<Vec<usize>> = (0..num_devices)
        .map(|k| (k * shard_size..(k + 1) * shard_size).collect())
        .collect();

    let mut num_test = (num_train / 5).max(10 * num_classes);
    num_test = num_test.div_ceil(num_classes) * num_classes;
    let test_labels: Vec<usize> = (0..num_test).map(|j| j % num_classes).collect();
    let test_features: Vec<Vec<f64>> =
        test_labels.iter().map(|&l| draw_sample(&mut stream, l)).collect();

    SyntheticTask {
        feature_dim,
        num_classes,
        class_means,
        noise_scale,
        features,
        labels,
        shards,
        test_features,
        test_labels,
    }
}

/// Writes the per-class logits for one sample into `out`.
fn fill_logits(task: &SyntheticTask, model: &[f64], x: &[f64], out: &mut [f64]) {
    let d = task.feature_dim;
    let c = task.num_classes;
    for (cls, slot) in out.iter_mut().enumerate() {
        let w = &model[cls * d..(cls + 1) * d];
        let mut z = model[c * d + cls];
        for (wi, xi) in w.iter().zip(x) {
            z += wi * xi;
        }
        *slot = z;
    }
}

/// Cross-entropy loss of one sample, with the softmax probabilities left
/// in `logits` for gradient reuse.
fn sample_loss_probs(task: &SyntheticTask, model: &[f64], j: usize, logits: &mut [f64]) -> f64 {
    let x = &task.features[j];
    fill_logits(task, model, x, logits);
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let lse = max + sum_exp.ln();
    let loss = lse - logits[task.labels[j]];
    for z in logits.iter_mut() {
        *z = (*z - lse).exp();
    }
    loss
}

/// Adds `scale` times the gradient of sample `j` to `out` and returns the
/// sample loss.
fn accumulate_sample_grad(
    task: &SyntheticTask,
    model: &[f64],
    j: usize,
    scale: f64,
    probs: &mut [f64],
    out: &mut [f64],
) -> f64 {
    let loss = sample_loss_probs(task, model, j, probs);
    let d = task.feature_dim;
    let c = task.num_classes;
    let x = &task.features[j];
    let label = task.labels[j];
    for cls in 0..c {
        let coef = probs[cls] - if cls == label { 1.0 } else { 0.0 };
        let row = &mut out[cls * d..(cls + 1) * d];
        for (slot, xi) in row.iter_mut().zip(x) {
            *slot += scale * coef * xi;
        }
        out[c * d + cls] += scale * coef;
    }
    loss
}

/// Mean gradient of the samples at shard-local positions `batch`.
///
/// Sample gradients are summed in batch order and divided once, matching
/// the arithmetic of the global gradient so a full-shard batch reproduces
/// the shard mean bit for bit. Positions index into `shard`; a repeated
/// position contributes once per occurrence, so a batch of one index
/// repeated twice equals that sample's own gradient.
pub fn local_gradient(
    task: &SyntheticTask,
    model: &[f64],
    shard: &[usize],
    batch: &[usize],
) -> Result<Vec<f64>, TaskError> {
    if batch.is_empty() {
        return Err(TaskError::EmptyBatch);
    }
    debug_assert_eq!(model.len(), task.model_dim());
    let mut grad = vec![0.0; task.model_dim()];
    let mut probs = vec![0.0; task.num_classes];
    for &pos in batch {
        accumulate_sample_grad(task, model, shard[pos], 1.0, &mut probs, &mut grad);
    }
    let inv = 1.0 / batch.len() as f64;
    for g in grad.iter_mut() {
        *g *= inv;
    }
    Ok(grad)
}

/// Mean train loss, computed as the average of shard mean losses.
pub fn dataset_loss(task: &SyntheticTask, model: &[f64]) -> f64 {
    let mut probs = vec![0.0; task.num_classes];
    let mut total = 0.0;
    for shard in &task.shards {
        let mut shard_loss = 0.0;
        for &j in shard {
            shard_loss += sample_loss_probs(task, model, j, &mut probs);
        }
        total += shard_loss / shard.len() as f64;
    }
    total / task.shards.len() as f64
}

/// Global train gradient: shard mean gradients summed in device order and
/// divided once, so a full-participation aggregation round reproduces it
/// bit for bit.
pub fn global_gradient(task: &SyntheticTask, model: &[f64]) -> Vec<f64> {
    let q = task.model_dim();
    let mut grad = vec![0.0; q];
    let mut shard_grad = vec![0.0; q];
    let mut probs = vec![0.0; task.num_classes];
    for shard in &task.shards {
        shard_grad.iter_mut().for_each(|g| *g = 0.0);
        for &j in shard {
            accumulate_sample_grad(task, model, j, 1.0, &mut probs, &mut shard_grad);
        }
        let inv = 1.0 / shard.len() as f64;
        for (g, s) in grad.iter_mut().zip(&shard_grad) {
            *g += s * inv;
        }
    }
    let inv_k = 1.0 / task.shards.len() as f64;
    for g in grad.iter_mut() {
        *g *= inv_k;
    }
    grad
}

/// One full pass over the train set: global loss and gradient plus exact
/// per-device gradient variances and second moments at this model.
pub fn survey(task: &SyntheticTask, model: &[f64]) -> Survey {
    let q = task.model_dim();
    let num_devices = task.shards.len();
    let mut grad = vec![0.0; q];
    let mut probs = vec![0.0; task.num_classes];
    let mut sample_grads: Vec<f64> = Vec::new();
    let mut per_device = Vec::with_capacity(num_devices);
    let mut loss = 0.0;

    for shard in &task.shards {
        let d = shard.len();
        sample_grads.clear();
        sample_grads.resize(d * q, 0.0);
        let mut shard_loss = 0.0;
        for (pos, &j) in shard.iter().enumerate() {
            let buf = &mut sample_grads[pos * q..(pos + 1) * q];
            shard_loss += accumulate_sample_grad(task, model, j, 1.0, &mut probs, buf);
        }
        shard_loss /= d as f64;

        let mut mean = vec![0.0; q];
        for pos in 0..d {
            let buf = &sample_grads[pos * q..(pos + 1) * q];
            for (m, g) in mean.iter_mut().zip(buf) {
                *m += g;
            }
        }
        let inv = 1.0 / d as f64;
        for m in mean.iter_mut() {
            *m *= inv;
        }
        let mut sigma2 = 0.0;
        let mut second_moment = 0.0;
        for pos in 0..d {
            let buf = &sample_grads[pos * q..(pos + 1) * q];
            let mut dev2 = 0.0;
            let mut norm2 = 0.0;
            for (g, m) in buf.iter().zip(&mean) {
                dev2 += (g - m) * (g - m);
                norm2 += g * g;
            }
            sigma2 += inv * dev2;
            second_moment += inv * norm2;
        }

        for (g, m) in grad.iter_mut().zip(&mean) {
            *g += m;
        }
        loss += shard_loss;
        per_device.push(DeviceStat { shard_loss, sigma2, second_moment });
    }

    let inv_k = 1.0 / num_devices as f64;
    for g in grad.iter_mut() {
        *g *= inv_k;
    }
    loss /= num_devices as f64;
    let grad_norm2 = grad.iter().map(|g| g * g).sum();
    Survey { loss, grad, grad_norm2, per_device }
}

/// Fraction of test samples whose largest logit matches the label.
///
/// Ties resolve to the lowest class index.
pub fn test_accuracy(task: &SyntheticTask, model: &[f64]) -> f64 {
    let mut logits = vec![0.0; task.num_classes];
    let mut correct = 0usize;
    for (x, &label) in task.test_features.iter().zip(&task.test_labels) {
        fill_logits(task, model, x, &mut logits);
        let mut best = 0usize;
        for (cls, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = cls;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    correct as f64 / task.test_labels.len() as f64
}

/// Largest gradient-difference slope over all point pairs.
///
/// For a gradient field sampled at `points`, returns the maximum of
/// `|grad(u) - grad(v)| / |u - v|`, a lower estimate of the Lipschitz
/// constant of the gradient. Pairs at zero distance are skipped.
pub fn max_secant_slope(points: &[Vec<f64>], grads: &[Vec<f64>]) -> f64 {
    assert_eq!(points.len(), grads.len());
    let mut best = 0.0f64;
    for a in 0..points.len() {
        for b in (a + 1)..points.len() {
            let mut dw2 = 0.0;
            for (u, v) in points[a].iter().zip(&points[b]) {
                dw2 += (u - v) * (u - v);
            }
            if dw2 == 0.0 {
                continue;
            }
            let mut dg2 = 0.0;
            for (u, v) in grads[a].iter().zip(&grads[b]) {
                dg2 += (u - v) * (u - v);
            }
            best = best.max((dg2 / dw2).sqrt());
        }
    }
    best
}

/// Default probe set: a random center near the origin plus symmetric steps
/// along a fixed direction family.
///
/// The paired steps make the pairwise secants measure directional curvature
/// at the center, so the resulting smoothness estimate varies only as much
/// as the curvature does across nearby centers, not with the luck of the
/// directions.
pub fn default_probes(task: &SyntheticTask, tree: &StreamTree, count: usize) -> Vec<Vec<f64>> {
    let q = task.model_dim();
    let mut stream = tree.stream(&[rng::purpose::PROBE]);
    let center: Vec<f64> =
        (0..q).map(|_| 0.05 * stream.sample::<f64, _>(StandardNormal)).collect();
    let step = 0.15;
    let mut probes = vec![center.clone()];
    let mut dir_index = 0usize;
    while probes.len() < count {
        let mut dir = vec![0.0; q];
        if dir_index == 0 {
            let unit = 1.0 / (q as f64).sqrt();
            dir.iter_mut().for_each(|d| *d = unit);
        } else {
            dir[(dir_index - 1) % q] = 1.0;
        }
        for sign in [1.0, -1.0] {
            if probes.len() < count {
                let p = center
                    .iter()
                    .zip(&dir)
                    .map(|(c, d)| c + sign * step * d)
                    .collect();
                probes.push(p);
            }
        }
        dir_index += 1;
    }
    probes
}

/// Estimates the smoothness constant, gradient norm bound, and per-device
/// gradient variances from at least ten probe models.
///
/// The smoothness estimate is the largest pairwise secant slope of the
/// global gradient. The norm bound is 1.5 times the largest single-sample
/// second moment seen at any probe, which dominates the second moment of
/// any mean over a larger batch. Variances are per-device maxima over
/// probes.
pub fn estimate_constants(task: &SyntheticTask, probes: &[Vec<f64>]) -> ConstantEstimates {
    assert!(probes.len() >= 10, "need at least ten probe points, got {}", probes.len());
    let num_devices = task.shards.len();
    let mut grads = Vec::with_capacity(probes.len());
    let mut phi_hat = 0.0f64;
    let mut sigma2_hat = vec![0.0f64; num_devices];
    for probe in probes {
        let s = survey(task, probe);
        for (k, stat) in s.per_device.iter().enumerate() {
            phi_hat = phi_hat.max(stat.second_moment);
            sigma2_hat[k] = sigma2_hat[k].max(stat.sigma2);
        }
        grads.push(s.grad);
    }
    let mu_hat = max_secant_slope(probes, &grads);
    ConstantEstimates { mu_hat, phi_hat: 1.5 * phi_hat, sigma2_hat }
}

/// Closed-form upper bound on the train loss smoothness constant.
///
/// The per-sample Hessian is bounded by half the outer product of the
/// bias-extended feature vector, so half the mean squared feature norm
/// (plus one for the bias) dominates the gradient Lipschitz constant.
pub fn smoothness_upper_bound(task: &SyntheticTask) -> f64 {
    let n = task.num_train() as f64;
    let total: f64 =
        task.features.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>() + 1.0).sum();
    total / (2.0 * n)
}
