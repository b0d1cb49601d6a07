//! Three-branch vehicle classifier: input assembly, two-stage training,
//! scoring, sample files and checkpoints.

use std::collections::hash_map::{Entry, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::{debug, info};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::candidates::{Anchor, CandidateSet};
use crate::error::{Error, Result};
use crate::eval::{covers, MatchMode};
use crate::geometry::OrientedBox;
use crate::netcore::{
    read_checkpoint, weighted_bce, write_checkpoint, Adam, AdamConfig, Cache, LayerSpec, LossWeights, NamedArray, Scalar,
    Sequential, Tensor, WarmupSchedule,
};
use crate::postproc::ScoredAnchor;
use crate::raster::{extract_patch, ImageStats, Raster};
use crate::roadmask::RoadMask;

pub const WINDOW: usize = 64;
pub const PATCH_H: usize = 32;
pub const PATCH_W: usize = 16;

/// The three patches seen by the model for one anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchInput<T = f32> {
    /// `4 x 64 x 64`, axis-aligned around the anchor centre.
    pub window: Tensor<T>,
    /// `4 x 32 x 16`, twice the anchor footprint, long axis along rows.
    pub subwindow: Tensor<T>,
    /// `4 x 32 x 16`, the anchor footprint, long axis along rows.
    pub anchor: Tensor<T>,
}

impl<T: Scalar> BranchInput<T> {
    pub fn cast<U: Scalar>(&self) -> BranchInput<U> {
        BranchInput {
            window: self.window.cast(),
            subwindow: self.subwindow.cast(),
            anchor: self.anchor.cast(),
        }
    }

    pub fn flipped(&self, horizontal: bool, vertical: bool) -> Self {
        let f = |t: &Tensor<T>| {
            let t = if horizontal { t.flip_horizontal() } else { t.clone() };
            if vertical {
                t.flip_vertical()
            } else {
                t
            }
        };
        BranchInput {
            window: f(&self.window),
            subwindow: f(&self.subwindow),
            anchor: f(&self.anchor),
        }
    }

    fn part(&self, b: Branch) -> &Tensor<T> {
        match b {
            Branch::Window => &self.window,
            Branch::Subwindow => &self.subwindow,
            Branch::Anchor => &self.anchor,
        }
    }
}

/// Sampling box whose rows follow the anchor's long side.
fn along_long_axis(b: &OrientedBox, scale: f64) -> OrientedBox {
    let c = b.canonical();
    OrientedBox::new(c.cx, c.cy, c.h * scale, c.w * scale, c.theta - std::f64::consts::FRAC_PI_2)
}

pub fn assemble_inputs(anchor: &OrientedBox, r: &Raster, stats: &ImageStats) -> Result<BranchInput> {
    let window = OrientedBox::axis_aligned(anchor.cx, anchor.cy, WINDOW as f64, WINDOW as f64);
    Ok(BranchInput {
        window: extract_patch(r, &window, WINDOW, WINDOW, stats)?,
        subwindow: extract_patch(r, &along_long_axis(anchor, 2.0), PATCH_H, PATCH_W, stats)?,
        anchor: extract_patch(r, &along_long_axis(anchor, 1.0), PATCH_H, PATCH_W, stats)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Window,
    Subwindow,
    Anchor,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Window, Branch::Subwindow, Branch::Anchor];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Window => "window",
            Branch::Subwindow => "subwindow",
            Branch::Anchor => "anchor",
        }
    }

    fn input_shape(self) -> [usize; 3] {
        match self {
            Branch::Window => [4, WINDOW, WINDOW],
            _ => [4, PATCH_H, PATCH_W],
        }
    }
}

/// Layer stacks of the three branch bodies and the fused head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub window: Vec<LayerSpec>,
    pub subwindow: Vec<LayerSpec>,
    pub anchor: Vec<LayerSpec>,
    pub head: Vec<LayerSpec>,
}

fn conv(out_ch: usize) -> LayerSpec {
    LayerSpec::Conv { out_ch, k: 3, stride: 1, pad: 1 }
}

impl Default for Architecture {
    fn default() -> Self {
        use LayerSpec::*;
        let patch = vec![
            conv(16),
            Relu,
            conv(32),
            Relu,
            MaxPool(2),
            conv(64),
            Relu,
            RoiPool { out_h: 4, out_w: 2 },
        ];
        Architecture {
            window: vec![
                conv(16),
                Relu,
                MaxPool(2),
                conv(32),
                Relu,
                MaxPool(2),
                conv(64),
                Relu,
                RoiPool { out_h: 4, out_w: 4 },
            ],
            subwindow: patch.clone(),
            anchor: patch,
            head: vec![Fc(256), Relu, Fc(64), Relu, Fc(1), Sigmoid],
        }
    }
}

impl Architecture {
    fn body(&self, b: Branch) -> &[LayerSpec] {
        match b {
            Branch::Window => &self.window,
            Branch::Subwindow => &self.subwindow,
            Branch::Anchor => &self.anchor,
        }
    }
}

/// A branch body with its own head, used for per-branch pretraining.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchClassifier<T> {
    pub branch: Branch,
    pub body: Sequential<T>,
    pub head: Sequential<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiBranchModel<T = f32> {
    pub window: Sequential<T>,
    pub subwindow: Sequential<T>,
    pub anchor: Sequential<T>,
    pub head: Sequential<T>,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ModelCaches<T> {
    pub bodies: [(Vec<usize>, Vec<Cache<T>>); 3],
    pub head: Vec<Cache<T>>,
    pub prob: T,
}

impl<T: Scalar> ModelCaches<T> {
    /// True when every ReLU and pooling decision matches.
    pub fn same_routing(&self, other: &ModelCaches<T>) -> bool {
        let all = |a: &[Cache<T>], b: &[Cache<T>]| a.iter().zip(b).all(|(x, y)| x.same_routing(y));
        self.bodies.iter().zip(&other.bodies).all(|(a, b)| all(&a.1, &b.1)) && all(&self.head, &other.head)
    }
}

fn head_input<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let data: Vec<T> = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::from_vec(&[data.len()], data)
}

fn scalar_prob<T: Scalar>(out: &Tensor<T>) -> Result<T> {
    if out.len() != 1 {
        return Err(Error::shape(format!("head must output one value, got {:?}", out.shape())));
    }
    Ok(out.data()[0])
}

impl<T: Scalar> BranchClassifier<T> {
    pub fn new(arch: &Architecture, branch: Branch, rng: &mut impl Rng) -> Result<Self> {
        let body = Sequential::new(arch.body(branch), &branch.input_shape(), branch.name(), rng)?;
        let feat: usize = body.output_shape().iter().product();
        let mut head = Sequential::new(&arch.head, &[feat], &format!("{}_head", branch.name()), rng)?;
        head.zero_last_linear();
        Ok(BranchClassifier { branch, body, head })
    }

    pub fn predict(&self, x: &BranchInput<T>) -> Result<f64> {
        let f = self.body.predict(x.part(self.branch))?;
        let f = f.reshape(&[self.head.input_shape()[0]])?;
        Ok(scalar_prob(&self.head.predict(&f)?)?.to_f64())
    }
}

impl<T: Scalar> MultiBranchModel<T> {
    /// Fresh model with He-uniform weights and a zeroed final layer, so an
    /// untrained model outputs exactly 0.5.
    pub fn new(arch: &Architecture, rng: &mut impl Rng) -> Result<Self> {
        let mut body = |b: Branch| Sequential::new(arch.body(b), &b.input_shape(), b.name(), rng);
        let (window, subwindow, anchor) = (body(Branch::Window)?, body(Branch::Subwindow)?, body(Branch::Anchor)?);
        let feat: usize = [&window, &subwindow, &anchor]
            .iter()
            .map(|s| s.output_shape().iter().product::<usize>())
            .sum();
        let mut head = Sequential::new(&arch.head, &[feat], "head", rng)?;
        head.zero_last_linear();
        Ok(MultiBranchModel { window, subwindow, anchor, head })
    }

    pub fn body(&self, b: Branch) -> &Sequential<T> {
        match b {
            Branch::Window => &self.window,
            Branch::Subwindow => &self.subwindow,
            Branch::Anchor => &self.anchor,
        }
    }

    pub fn body_mut(&mut self, b: Branch) -> &mut Sequential<T> {
        match b {
            Branch::Window => &mut self.window,
            Branch::Subwindow => &mut self.subwindow,
            Branch::Anchor => &mut self.anchor,
        }
    }

    pub fn nets(&self) -> [&Sequential<T>; 4] {
        [&self.window, &self.subwindow, &self.anchor, &self.head]
    }

    pub fn nets_mut(&mut self) -> [&mut Sequential<T>; 4] {
        [&mut self.window, &mut self.subwindow, &mut self.anchor, &mut self.head]
    }

    pub fn forward(&self, x: &BranchInput<T>) -> Result<ModelCaches<T>> {
        let run = |b: Branch| -> Result<(Tensor<T>, Vec<Cache<T>>)> { self.body(b).forward(x.part(b)) };
        let (fw, cw) = run(Branch::Window)?;
        let (fs, cs) = run(Branch::Subwindow)?;
        let (fa, ca) = run(Branch::Anchor)?;
        let (out, ch) = self.head.forward(&head_input(&[&fw, &fs, &fa])?)?;
        Ok(ModelCaches {
            bodies: [
                (fw.shape().to_vec(), cw),
                (fs.shape().to_vec(), cs),
                (fa.shape().to_vec(), ca),
            ],
            head: ch,
            prob: scalar_prob(&out)?,
        })
    }

    pub fn predict(&self, x: &BranchInput<T>) -> Result<f64> {
        Ok(self.forward(x)?.prob.to_f64())
    }

    /// Probability from precomputed window-branch features. Equal to
    /// [`predict`](Self::predict) bit for bit when `window_features` came
    /// from `self.window` on the same window patch.
    pub fn predict_with_window(&self, window_features: &Tensor<T>, subwindow: &Tensor<T>, anchor: &Tensor<T>) -> Result<f64> {
        let fs = self.subwindow.predict(subwindow)?;
        let fa = self.anchor.predict(anchor)?;
        let out = self.head.predict(&head_input(&[window_features, &fs, &fa])?)?;
        Ok(scalar_prob(&out)?.to_f64())
    }

    /// Accumulates `dL/dtheta` given `dL/dp` into `grads` (one entry per
    /// array of `window`, `subwindow`, `anchor`, `head`, in that order). With
    /// `bodies` false only the head receives gradients.
    pub fn backward(&self, caches: &ModelCaches<T>, dl_dp: T, grads: &mut [Vec<Vec<T>>; 4], bodies: bool) -> Result<()> {
        let [w, s, a, h] = grads;
        self.backward_into(caches, dl_dp, [w, s, a, h], bodies)
    }

    /// Like [`backward`](Self::backward), with one gradient slice per net.
    /// The body slices are untouched when `bodies` is false.
    pub fn backward_into(&self, caches: &ModelCaches<T>, dl_dp: T, grads: [&mut [Vec<T>]; 4], bodies: bool) -> Result<()> {
        let g = Tensor::from_vec(&[1], vec![dl_dp])?;
        let gin = self.head.backward(&caches.head, &g, grads[3], bodies)?;
        if !bodies {
            return Ok(());
        }
        let gin = gin.ok_or_else(|| Error::shape("head produced no input gradient"))?;
        let mut offset = 0;
        for (i, b) in Branch::ALL.iter().enumerate() {
            let shape = &caches.bodies[i].0;
            let n: usize = shape.iter().product();
            let part = Tensor::from_vec(shape, gin.data()[offset..offset + n].to_vec())?;
            offset += n;
            self.body(*b).backward(&caches.bodies[i].1, &part, grads[i], false)?;
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> [Vec<Vec<T>>; 4] {
        self.nets().map(|n| n.zero_grads())
    }

    pub fn cast<U: Scalar>(&self) -> MultiBranchModel<U> {
        MultiBranchModel {
            window: self.window.cast(),
            subwindow: self.subwindow.cast(),
            anchor: self.anchor.cast(),
            head: self.head.cast(),
        }
    }

    pub fn export(&self) -> Vec<NamedArray> {
        self.nets().iter().flat_map(|n| n.export()).collect()
    }

    pub fn import(&mut self, arrays: &[NamedArray]) -> Result<()> {
        for n in self.nets_mut() {
            n.import(arrays)?;
        }
        Ok(())
    }
}

impl MultiBranchModel<f32> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        write_checkpoint(&mut w, &self.export()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, arch: &Architecture) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let arrays = read_checkpoint(&mut BufReader::new(f))?;
        let mut model = MultiBranchModel::new(arch, &mut ChaCha8Rng::seed_from_u64(0))?;
        model.import(&arrays)?;
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub shuffle: bool,
    pub flip: bool,
    /// Keep the pretrained bodies fixed in the joint stage.
    pub freeze_bodies: bool,
    pub schedule: WarmupSchedule,
    pub window_schedule: WarmupSchedule,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch: 200,
            shuffle: true,
            flip: true,
            freeze_bodies: false,
            schedule: WarmupSchedule::patch(),
            window_schedule: WarmupSchedule::window(),
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("training: epochs and batch must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config("training: threshold must lie in (0, 1)".into()));
        }
        self.schedule.validate()?;
        self.window_schedule.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: BranchInput,
    pub vehicle: bool,
}

/// Epoch-averaged weighted loss per stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub window: Vec<f64>,
    pub subwindow: Vec<f64>,
    pub anchor: Vec<f64>,
    pub joint: Vec<f64>,
}

impl TrainLog {
    pub fn branch(&self, b: Branch) -> &[f64] {
        match b {
            Branch::Window => &self.window,
            Branch::Subwindow => &self.subwindow,
            Branch::Anchor => &self.anchor,
        }
    }
}

/// Something with flat parameter arrays and a per-sample gradient.
trait Trainee {
    fn param_lens(&self) -> Vec<usize>;
    fn params_mut(&mut self) -> Vec<&mut [f32]>;
    /// Adds `scale * dL/dtheta` for one sample into `grads` and returns the
    /// sample loss.
    fn accumulate(&self, x: &BranchInput, vehicle: bool, weight: f64, scale: f32, grads: &mut [Vec<f32>]) -> Result<f64>;
}

fn loss_and_slope(p: f32, vehicle: bool, weight: f64, scale: f32) -> (f64, f32) {
    let (loss, dp) = weighted_bce(p as f64, vehicle, weight);
    (loss, dp as f32 * scale)
}

impl Trainee for BranchClassifier<f32> {
    fn param_lens(&self) -> Vec<usize> {
        let mut l = self.body.param_lens();
        l.extend(self.head.param_lens());
        l
    }

    fn params_mut(&mut self) -> Vec<&mut [f32]> {
        self.body
            .params_mut()
            .into_iter()
            .chain(self.head.params_mut())
            .map(|p| p.values.as_mut_slice())
            .collect()
    }

    fn accumulate(&self, x: &BranchInput, vehicle: bool, weight: f64, scale: f32, grads: &mut [Vec<f32>]) -> Result<f64> {
        let (f, body_caches) = self.body.forward(x.part(self.branch))?;
        let shape = f.shape().to_vec();
        let f = f.reshape(&[self.head.input_shape()[0]])?;
        let (out, head_caches) = self.head.forward(&f)?;
        let (loss, slope) = loss_and_slope(scalar_prob(&out)?, vehicle, weight, scale);
        let nb = self.body.param_lens().len();
        let (gb, gh) = grads.split_at_mut(nb);
        let gin = self
            .head
            .backward(&head_caches, &Tensor::from_vec(&[1], vec![slope])?, gh, true)?
            .ok_or_else(|| Error::shape("head produced no input gradient"))?;
        self.body.backward(&body_caches, &gin.reshape(&shape)?, gb, false)?;
        Ok(loss)
    }
}

struct Joint<'a> {
    model: &'a mut MultiBranchModel<f32>,
    bodies: bool,
}

impl Trainee for Joint<'_> {
    fn param_lens(&self) -> Vec<usize> {
        if self.bodies {
            self.model.nets().iter().flat_map(|n| n.param_lens()).collect()
        } else {
            self.model.head.param_lens()
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [f32]> {
        let nets: Vec<&mut Sequential<f32>> = if self.bodies {
            self.model.nets_mut().into_iter().collect()
        } else {
            vec![&mut self.model.head]
        };
        nets.into_iter()
            .flat_map(|n| n.params_mut())
            .map(|p| p.values.as_mut_slice())
            .collect()
    }

    fn accumulate(&self, x: &BranchInput, vehicle: bool, weight: f64, scale: f32, grads: &mut [Vec<f32>]) -> Result<f64> {
        let caches = self.model.forward(x)?;
        let (loss, slope) = loss_and_slope(caches.prob, vehicle, weight, scale);
        // layers accumulate, so gradients go straight into the batch sums
        let parts = if self.bodies {
            let counts = self.model.nets().map(|n| n.param_lens().len());
            let (w, rest) = grads.split_at_mut(counts[0]);
            let (s, rest) = rest.split_at_mut(counts[1]);
            let (a, h) = rest.split_at_mut(counts[2]);
            [w, s, a, h]
        } else {
            [&mut [][..], &mut [][..], &mut [][..], grads]
        };
        self.model.backward_into(&caches, slope, parts, self.bodies)?;
        Ok(loss)
    }
}

fn run_stage(
    net: &mut dyn Trainee,
    samples: &[Sample],
    weights: &LossWeights,
    cfg: &TrainConfig,
    schedule: &WarmupSchedule,
    rng: &mut ChaCha8Rng,
    stage: &str,
) -> Result<Vec<f64>> {
    let lens = net.param_lens();
    let mut adam = Adam::new(AdamConfig::default(), &lens);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let total_weight: f64 = samples.iter().map(|s| weights.for_label(s.vehicle)).sum();
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(rng);
        }
        let lr = schedule.rate(epoch);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(cfg.batch) {
            let mut grads: Vec<Vec<f32>> = lens.iter().map(|&n| vec![0.0; n]).collect();
            let scale = 1.0 / chunk.len() as f32;
            for &i in chunk {
                let s = &samples[i];
                let (h, v) = if cfg.flip { (rng.random_bool(0.5), rng.random_bool(0.5)) } else { (false, false) };
                let x = if h || v { s.input.flipped(h, v) } else { s.input.clone() };
                let w = weights.for_label(s.vehicle);
                epoch_loss += net.accumulate(&x, s.vehicle, w, scale, &mut grads)?;
            }
            let mut params = net.params_mut();
            adam.step(&mut params, &grads, lr).map_err(|e| Error::Training {
                epoch,
                reason: format!("{stage}: {e}"),
            })?;
        }
        // normalise by the summed weights so a balanced set reports plain BCE
        let mean = epoch_loss / total_weight;
        if !mean.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: format!("{stage}: loss is not finite"),
            });
        }
        debug!("{stage} epoch {epoch}: lr {lr:.2e} loss {mean:.5}");
        log.push(mean);
    }
    Ok(log)
}

/// Two-stage training: each branch with a temporary head, then the fused
/// model initialised from the pretrained bodies.
pub fn train(arch: &Architecture, samples: &[Sample], cfg: &TrainConfig, seed: u64) -> Result<(MultiBranchModel, TrainLog)> {
    cfg.validate()?;
    let n_v = samples.iter().filter(|s| s.vehicle).count() as u64;
    let n_n = samples.len() as u64 - n_v;
    if n_v == 0 || n_n == 0 {
        return Err(Error::invalid(format!(
            "training needs both classes, got {n_v} vehicle and {n_n} non-vehicle samples"
        )));
    }
    let weights = LossWeights::from_counts(n_v, n_n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = MultiBranchModel::new(arch, &mut rng)?;
    let mut log = TrainLog::default();
    for b in Branch::ALL {
        let mut bc = BranchClassifier::new(arch, b, &mut rng)?;
        let schedule = if b == Branch::Window { &cfg.window_schedule } else { &cfg.schedule };
        let l = run_stage(&mut bc, samples, &weights, cfg, schedule, &mut rng, b.name())?;
        info!("stage 1 {}: loss {:.4} -> {:.4}", b.name(), l[0], l[l.len() - 1]);
        match b {
            Branch::Window => log.window = l,
            Branch::Subwindow => log.subwindow = l,
            Branch::Anchor => log.anchor = l,
        }
        *model.body_mut(b) = bc.body;
    }
    let mut joint = Joint {
        model: &mut model,
        bodies: !cfg.freeze_bodies,
    };
    log.joint = run_stage(&mut joint, samples, &weights, cfg, &cfg.schedule, &mut rng, "joint")?;
    info!("stage 2: loss {:.4} -> {:.4}", log.joint[0], log.joint[log.joint.len() - 1]);
    Ok((model, log))
}

pub fn predict(model: &MultiBranchModel, x: &BranchInput) -> Result<f64> {
    model.predict(x)
}

/// Probabilities for every anchor, in input order.
///
/// The window patch depends only on the anchor centre, and the anchors of one
/// candidate share a centre, so window features are computed once per centre.
pub fn score_anchors(model: &MultiBranchModel, r: &Raster, stats: &ImageStats, anchors: &[Anchor]) -> Result<Vec<ScoredAnchor>> {
    let mut windows: HashMap<(u64, u64), Tensor<f32>> = HashMap::new();
    anchors
        .iter()
        .map(|a| {
            let (cx, cy) = (a.rect.cx, a.rect.cy);
            let fw = match windows.entry((cx.to_bits(), cy.to_bits())) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => {
                    let window = OrientedBox::axis_aligned(cx, cy, WINDOW as f64, WINDOW as f64);
                    e.insert(model.window.predict(&extract_patch(r, &window, WINDOW, WINDOW, stats)?)?)
                }
            };
            let sub = extract_patch(r, &along_long_axis(&a.rect, 2.0), PATCH_H, PATCH_W, stats)?;
            let own = extract_patch(r, &along_long_axis(&a.rect, 1.0), PATCH_H, PATCH_W, stats)?;
            Ok(ScoredAnchor {
                anchor: a.clone(),
                prob: model.predict_with_window(fw, &sub, &own)?,
            })
        })
        .collect()
}

/// How training samples are drawn from a labelled scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleParams {
    /// Anchors drawn per candidate; each is labelled by coverage of a
    /// reference box.
    pub anchors_per_candidate: usize,
    /// Extra negatives: random boxes on road pixels clear of any vehicle.
    pub random_negatives: usize,
    /// Clearance between a random negative and any reference box, in pixels.
    pub clearance_px: f64,
}

impl Default for SampleParams {
    fn default() -> Self {
        SampleParams {
            anchors_per_candidate: 1,
            random_negatives: 15,
            clearance_px: 6.0,
        }
    }
}

pub fn scene_samples(
    r: &Raster,
    mask: &RoadMask,
    cands: &CandidateSet,
    truth: &[OrientedBox],
    p: &SampleParams,
    seed: u64,
) -> Result<Vec<Sample>> {
    let stats = ImageStats::from_raster(r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for c in &cands.candidates {
        let own: Vec<&Anchor> = cands.anchors.iter().filter(|a| a.candidate == c.id).collect();
        for a in own.choose_multiple(&mut rng, p.anchors_per_candidate) {
            let vehicle = truth.iter().any(|t| covers(&a.rect, t, MatchMode::Coverage));
            out.push(Sample {
                input: assemble_inputs(&a.rect, r, &stats)?,
                vehicle,
            });
        }
    }
    let road: Vec<(usize, usize)> = (0..mask.height())
        .flat_map(|row| (0..mask.width()).map(move |col| (row, col)))
        .filter(|&(row, col)| mask.is_road(row, col))
        .collect();
    if road.is_empty() {
        return Ok(out);
    }
    let mut made = 0;
    let mut tries = 0;
    while made < p.random_negatives && tries < 1000 * p.random_negatives.max(1) {
        tries += 1;
        let (row, col) = road[rng.random_range(0..road.len())];
        let len = rng.random_range(8.0..24.0f64);
        let wid = rng.random_range(3.0..len.min(10.0));
        let theta = rng.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
        let b = OrientedBox::new(col as f64, row as f64, len, wid, theta);
        let grown = OrientedBox::new(b.cx, b.cy, b.w + 2.0 * p.clearance_px, b.h + 2.0 * p.clearance_px, b.theta);
        if truth.iter().any(|t| t.intersection_area(&grown) > 0.0) {
            continue;
        }
        out.push(Sample {
            input: assemble_inputs(&b, r, &stats)?,
            vehicle: false,
        });
        made += 1;
    }
    Ok(out)
}

/// Contents of `manifest.json` in a sample directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub count: usize,
    pub n_vehicle: u64,
    pub n_non_vehicle: u64,
    pub record_bytes: usize,
    pub window_shape: [usize; 3],
    pub patch_shape: [usize; 3],
    /// Statistics of the source images the patches were normalised with.
    pub sources: Vec<ImageStats>,
}

const WINDOW_LEN: usize = 4 * WINDOW * WINDOW;
const PATCH_LEN: usize = 4 * PATCH_H * PATCH_W;
const RECORD_BYTES: usize = 1 + 4 * (WINDOW_LEN + 2 * PATCH_LEN);

/// Writes `records.bin` (label byte then the three tensors as little-endian
/// `f32`) and `manifest.json`.
pub fn write_samples(dir: impl AsRef<Path>, samples: &[Sample], sources: &[ImageStats]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("records.bin");
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    for s in samples {
        let mut rec = Vec::with_capacity(RECORD_BYTES);
        rec.push(u8::from(s.vehicle));
        for t in [&s.input.window, &s.input.subwindow, &s.input.anchor] {
            for v in t.data() {
                rec.extend_from_slice(&v.to_le_bytes());
            }
        }
        if rec.len() != RECORD_BYTES {
            return Err(Error::shape("sample tensors have unexpected sizes"));
        }
        w.write_all(&rec).map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let n_v = samples.iter().filter(|s| s.vehicle).count() as u64;
    let manifest = SampleManifest {
        count: samples.len(),
        n_vehicle: n_v,
        n_non_vehicle: samples.len() as u64 - n_v,
        record_bytes: RECORD_BYTES,
        window_shape: [4, WINDOW, WINDOW],
        patch_shape: [4, PATCH_H, PATCH_W],
        sources: sources.to_vec(),
    };
    let mpath = dir.join("manifest.json");
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))
}

pub fn read_samples(dir: impl AsRef<Path>) -> Result<(Vec<Sample>, SampleManifest)> {
    let dir = dir.as_ref();
    let mpath = dir.join("manifest.json");
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: SampleManifest = serde_json::from_str(&text)?;
    if manifest.record_bytes != RECORD_BYTES {
        return Err(Error::Load {
            path: mpath,
            reason: format!("record size {} does not match {RECORD_BYTES}", manifest.record_bytes),
        });
    }
    let path = dir.join("records.bin");
    let mut bytes = Vec::new();
    File::open(&path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(&path, e))?;
    if bytes.len() != manifest.count * RECORD_BYTES {
        return Err(Error::Load {
            path,
            reason: format!("expected {} records, file holds {} bytes", manifest.count, bytes.len()),
        });
    }
    let floats = |b: &[u8]| -> Vec<f32> { b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect() };
    let mut samples = Vec::with_capacity(manifest.count);
    for rec in bytes.chunks_exact(RECORD_BYTES) {
        let vehicle = match rec[0] {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Load {
                    path: path.clone(),
                    reason: format!("bad label byte {other}"),
                })
            }
        };
        let (w0, w1) = (1, 1 + 4 * WINDOW_LEN);
        let (s1, a1) = (w1 + 4 * PATCH_LEN, w1 + 8 * PATCH_LEN);
        samples.push(Sample {
            input: BranchInput {
                window: Tensor::from_vec(&[4, WINDOW, WINDOW], floats(&rec[w0..w1]))?,
                subwindow: Tensor::from_vec(&[4, PATCH_H, PATCH_W], floats(&rec[w1..s1]))?,
                anchor: Tensor::from_vec(&[4, PATCH_H, PATCH_W], floats(&rec[s1..a1]))?,
            },
            vehicle,
        });
    }
    Ok((samples, manifest))
}
