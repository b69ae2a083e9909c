//! Differentiable objectives: the quadratic oracle, softmax regression and
//! small MLPs, with exact gradients and Hessian-vector products.

mod network;

use serde::{Deserialize, Serialize};

pub use network::Activation;
pub(crate) use network::{argmax, softmax};
use network::{layout, Network, OutputTarget};

use crate::error::{check_dims, ForgeError, Result};
use crate::numcore::{all_finite, kaiming_sample, ParamVector, RngStream};

/// Hidden-layer limits for MLPs.
pub const MAX_WEIGHT_LAYERS: usize = 3;
pub const MAX_HIDDEN_UNITS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// `½(θ−θ*)ᵀ diag(spectrum) (θ−θ*) + l_star`.
    Quadratic { spectrum: Vec<f64>, theta_star: Vec<f64>, l_star: f64 },
    /// Multinomial logistic regression (one weight row and bias per class).
    Logistic {
        input_dim: usize,
        num_classes: usize,
        #[serde(default)]
        weight_decay: f64,
    },
    /// `layer_dims = [input, hidden.., output]`. Output is `num_classes`
    /// logits, or a single value for regression (`num_classes == 0`).
    Mlp {
        layer_dims: Vec<usize>,
        activation: Activation,
        num_classes: usize,
        #[serde(default)]
        weight_decay: f64,
    },
}

impl ModelSpec {
    pub fn quadratic(spectrum: Vec<f64>, theta_star: Vec<f64>, l_star: f64) -> Result<Self> {
        let spec = ModelSpec::Quadratic { spectrum, theta_star, l_star };
        spec.validate()?;
        Ok(spec)
    }

    pub fn logistic(input_dim: usize, num_classes: usize, weight_decay: f64) -> Result<Self> {
        let spec = ModelSpec::Logistic { input_dim, num_classes, weight_decay };
        spec.validate()?;
        Ok(spec)
    }

    pub fn mlp(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        activation: Activation,
        weight_decay: f64,
    ) -> Result<Self> {
        let mut layer_dims = vec![input_dim];
        layer_dims.extend_from_slice(hidden);
        layer_dims.push(num_classes.max(1));
        let spec = ModelSpec::Mlp { layer_dims, activation, num_classes, weight_decay };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Quadratic { spectrum, theta_star, l_star } => {
                if spectrum.is_empty() {
                    return Err(ForgeError::InvalidArgument("empty spectrum".into()));
                }
                if spectrum.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
                    return Err(ForgeError::InvalidArgument(
                        "spectrum entries must be finite and strictly positive".into(),
                    ));
                }
                if spectrum.windows(2).any(|w| w[0] < w[1]) {
                    return Err(ForgeError::InvalidArgument("spectrum must be non-increasing".into()));
                }
                check_dims(spectrum.len(), theta_star.len())?;
                if !all_finite(theta_star) || !l_star.is_finite() {
                    return Err(ForgeError::NonFinite("quadratic optimum".into()));
                }
            }
            ModelSpec::Logistic { input_dim, num_classes, weight_decay } => {
                if *input_dim == 0 || *num_classes < 2 {
                    return Err(ForgeError::InvalidArgument(
                        "logistic model needs input_dim >= 1 and num_classes >= 2".into(),
                    ));
                }
                check_decay(*weight_decay)?;
            }
            ModelSpec::Mlp { layer_dims, num_classes, weight_decay, .. } => {
                if layer_dims.len() < 2 || layer_dims.contains(&0) {
                    return Err(ForgeError::InvalidArgument("layer_dims must be positive, len >= 2".into()));
                }
                if layer_dims.len() - 1 > MAX_WEIGHT_LAYERS {
                    return Err(ForgeError::InvalidArgument(format!(
                        "at most {MAX_WEIGHT_LAYERS} weight layers supported"
                    )));
                }
                let hidden = &layer_dims[1..layer_dims.len() - 1];
                if hidden.iter().any(|&h| h > MAX_HIDDEN_UNITS) {
                    return Err(ForgeError::InvalidArgument(format!(
                        "hidden layers are capped at {MAX_HIDDEN_UNITS} units"
                    )));
                }
                let out = *layer_dims.last().unwrap();
                let expected = if *num_classes == 0 { 1 } else { *num_classes };
                if *num_classes == 1 || out != expected {
                    return Err(ForgeError::InvalidArgument(format!(
                        "output width {out} inconsistent with num_classes {num_classes}"
                    )));
                }
                check_decay(*weight_decay)?;
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        match self {
            ModelSpec::Quadratic { spectrum, .. } => spectrum.len(),
            _ => self.network().map(|n| n.param_count()).unwrap_or(0),
        }
    }

    pub fn input_dim(&self) -> Option<usize> {
        match self {
            ModelSpec::Quadratic { .. } => None,
            ModelSpec::Logistic { input_dim, .. } => Some(*input_dim),
            ModelSpec::Mlp { layer_dims, .. } => Some(layer_dims[0]),
        }
    }

    /// Number of classes for classifiers; `None` for regression and quadratics.
    pub fn num_classes(&self) -> Option<usize> {
        match self {
            ModelSpec::Quadratic { .. } => None,
            ModelSpec::Logistic { num_classes, .. } => Some(*num_classes),
            ModelSpec::Mlp { num_classes, .. } => (*num_classes >= 2).then_some(*num_classes),
        }
    }

    pub fn weight_decay(&self) -> f64 {
        match self {
            ModelSpec::Quadratic { .. } => 0.0,
            ModelSpec::Logistic { weight_decay, .. } | ModelSpec::Mlp { weight_decay, .. } => *weight_decay,
        }
    }

    /// The same model with a different weight-decay coefficient. Quadratics
    /// are returned unchanged.
    pub fn with_weight_decay(&self, wd: f64) -> Result<Self> {
        check_decay(wd)?;
        let mut out = self.clone();
        match &mut out {
            ModelSpec::Quadratic { .. } => {}
            ModelSpec::Logistic { weight_decay, .. } | ModelSpec::Mlp { weight_decay, .. } => *weight_decay = wd,
        }
        Ok(out)
    }

    /// Whether the objective family is convex in θ.
    pub fn is_convex(&self) -> bool {
        !matches!(self, ModelSpec::Mlp { .. })
    }

    /// Per-coordinate standard deviations of the Kaiming draw.
    pub fn kaiming_scales(&self, scope: NoiseScope) -> Vec<f64> {
        let d = self.param_count();
        match (scope, self.network()) {
            (NoiseScope::PerLayerFanIn, Some(net)) => {
                let mut sd = vec![0.0; d];
                for l in &net.layers {
                    let s = (2.0 / l.fan_in as f64).sqrt();
                    sd[l.offset..l.offset + l.len()].iter_mut().for_each(|v| *v = s);
                }
                sd
            }
            _ => vec![(2.0 / d as f64).sqrt(); d],
        }
    }

    /// Fresh Kaiming initialisation.
    pub fn kaiming_init(&self, scope: NoiseScope, rng: &mut RngStream) -> Result<ParamVector> {
        match scope {
            NoiseScope::GlobalD => kaiming_sample(self.param_count(), rng),
            NoiseScope::PerLayerFanIn => {
                let sd = self.kaiming_scales(scope);
                ParamVector::new(sd.iter().map(|s| s * rng.normal()).collect())
            }
        }
    }

    pub(crate) fn network(&self) -> Option<Network> {
        match self {
            ModelSpec::Quadratic { .. } => None,
            ModelSpec::Logistic { input_dim, num_classes, .. } => Some(Network {
                layers: layout(&[*input_dim, *num_classes]),
                activation: Activation::Relu,
            }),
            ModelSpec::Mlp { layer_dims, activation, .. } => {
                Some(Network { layers: layout(layer_dims), activation: *activation })
            }
        }
    }
}

fn check_decay(wd: f64) -> Result<()> {
    if wd >= 0.0 && wd.is_finite() {
        Ok(())
    } else {
        Err(ForgeError::InvalidArgument("weight_decay must be finite and >= 0".into()))
    }
}

/// Variance convention for Kaiming draws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScope {
    /// `Normal(0, 2/d)` with `d` the total parameter count.
    #[default]
    GlobalD,
    /// `Normal(0, 2/fan_in)` per layer (weights and biases alike).
    PerLayerFanIn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
    QuadraticForm,
}

/// Supervision attached to a data view.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, num_classes: usize },
    /// Row-major `n × num_classes` probability targets (distillation).
    Soft { probs: Vec<f64>, num_classes: usize },
    Real(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Soft { probs, num_classes } => probs.len() / num_classes,
            Targets::Real(y) => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn target(&self, i: usize) -> OutputTarget<'_> {
        match self {
            Targets::Classes { labels, .. } => OutputTarget::Class(labels[i]),
            Targets::Soft { probs, num_classes } => {
                OutputTarget::Soft(&probs[i * num_classes..(i + 1) * num_classes])
            }
            Targets::Real(y) => OutputTarget::Real(y[i]),
        }
    }
}

/// A compact copy of the examples an objective averages over.
#[derive(Clone, Debug, PartialEq)]
pub struct DataView {
    inputs: Vec<f64>,
    input_dim: usize,
    targets: Targets,
}

impl DataView {
    pub fn new(inputs: Vec<f64>, input_dim: usize, targets: Targets) -> Result<Self> {
        if input_dim == 0 {
            return Err(ForgeError::InvalidDimension("input_dim must be >= 1".into()));
        }
        if inputs.len() != input_dim * targets.len() {
            return Err(ForgeError::DimensionMismatch {
                expected: input_dim * targets.len(),
                got: inputs.len(),
            });
        }
        if !all_finite(&inputs) {
            return Err(ForgeError::NonFinite("data view inputs".into()));
        }
        if let Targets::Classes { labels, num_classes } = &targets {
            if let Some(&bad) = labels.iter().find(|&&y| y >= *num_classes) {
                return Err(ForgeError::InvalidArgument(format!("label {bad} >= num_classes")));
            }
        }
        Ok(Self { inputs, input_dim, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Same inputs, different supervision.
    pub fn with_targets(&self, targets: Targets) -> Result<Self> {
        DataView::new(self.inputs.clone(), self.input_dim, targets)
    }

    /// Concatenation of two views with matching target kinds.
    pub fn concat(&self, other: &DataView) -> Result<Self> {
        check_dims(self.input_dim, other.input_dim)?;
        let mut inputs = self.inputs.clone();
        inputs.extend_from_slice(&other.inputs);
        let targets = match (&self.targets, &other.targets) {
            (Targets::Classes { labels: a, num_classes: ca }, Targets::Classes { labels: b, num_classes: cb })
                if ca == cb =>
            {
                Targets::Classes { labels: a.iter().chain(b).copied().collect(), num_classes: *ca }
            }
            (Targets::Real(a), Targets::Real(b)) => Targets::Real(a.iter().chain(b).copied().collect()),
            _ => return Err(ForgeError::InvalidArgument("cannot concatenate mismatched targets".into())),
        };
        DataView::new(inputs, self.input_dim, targets)
    }
}

/// A differentiable map `θ ↦ 𝓛(θ)`: model, loss and the data it averages over.
/// Pure: no hidden state, safe to share across threads.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    model: ModelSpec,
    loss: LossKind,
    data: Option<DataView>,
    scale: f64,
}

/// `½(θ−θ*)ᵀ diag(spectrum) (θ−θ*) + l_star`.
pub fn make_quadratic(spectrum: Vec<f64>, theta_star: ParamVector, l_star: f64) -> Result<Objective> {
    let model = ModelSpec::quadratic(spectrum, theta_star.into_vec(), l_star)?;
    Ok(Objective { model, loss: LossKind::QuadraticForm, data: None, scale: 1.0 })
}

impl Objective {
    /// Objective of a data-driven model over `data`.
    pub fn new(model: ModelSpec, data: DataView) -> Result<Self> {
        model.validate()?;
        let net = model
            .network()
            .ok_or_else(|| ForgeError::Unsupported("quadratic models carry no data; use make_quadratic".into()))?;
        check_dims(net.layers[0].fan_in, data.input_dim())?;
        let loss = match (&data.targets, model.num_classes()) {
            (Targets::Classes { num_classes, .. }, Some(c)) | (Targets::Soft { num_classes, .. }, Some(c)) => {
                check_dims(c, *num_classes)?;
                LossKind::CrossEntropy
            }
            (Targets::Real(_), None) => LossKind::Mse,
            _ => {
                return Err(ForgeError::InvalidArgument(
                    "target kind does not match the model output".into(),
                ))
            }
        };
        Ok(Self { model, loss, data: Some(data), scale: 1.0 })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn data(&self) -> Option<&DataView> {
        self.data.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.model.param_count()
    }

    /// Number of examples; zero for the analytic quadratic.
    pub fn num_examples(&self) -> usize {
        self.data.as_ref().map_or(0, DataView::len)
    }

    pub fn is_classification(&self) -> bool {
        self.loss == LossKind::CrossEntropy
    }

    /// The same objective multiplied by `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(ForgeError::InvalidArgument("scale must be positive".into()));
        }
        Ok(Self { scale: self.scale * s, ..self.clone() })
    }

    /// Same model, different supervision on the same inputs.
    pub fn with_targets(&self, targets: Targets) -> Result<Self> {
        let data = self
            .data
            .as_ref()
            .ok_or_else(|| ForgeError::Unsupported("objective has no data".into()))?
            .with_targets(targets)?;
        let mut obj = Objective::new(self.model.clone(), data)?;
        obj.scale = self.scale;
        Ok(obj)
    }

    /// Known curvature bounds `(μ, β)` of a quadratic objective.
    pub fn quadratic_bounds(&self) -> Option<(f64, f64)> {
        match &self.model {
            ModelSpec::Quadratic { spectrum, .. } => {
                Some((self.scale * spectrum[spectrum.len() - 1], self.scale * spectrum[0]))
            }
            _ => None,
        }
    }

    /// Minimiser and minimum of a quadratic objective.
    pub fn quadratic_optimum(&self) -> Option<(ParamVector, f64)> {
        match &self.model {
            ModelSpec::Quadratic { theta_star, l_star, .. } => {
                Some((ParamVector::new(theta_star.clone()).ok()?, self.scale * l_star))
            }
            _ => None,
        }
    }

    fn check_theta(&self, theta: &ParamVector) -> Result<()> {
        check_dims(self.dim(), theta.dim())
    }

    fn require_data(&self) -> Result<(&DataView, Network)> {
        match (&self.data, self.model.network()) {
            (Some(d), Some(n)) => {
                if d.is_empty() {
                    Err(ForgeError::EmptyData("objective data view has no examples".into()))
                } else {
                    Ok((d, n))
                }
            }
            _ => Err(ForgeError::Unsupported("operation requires a data-driven model".into())),
        }
    }

    /// Mean loss over the data view.
    pub fn value(&self, theta: &ParamVector) -> Result<f64> {
        self.check_theta(theta)?;
        self.value_impl(theta.as_slice(), None)
    }

    pub fn gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        Ok(self.value_and_gradient(theta)?.1)
    }

    pub fn value_and_gradient(&self, theta: &ParamVector) -> Result<(f64, ParamVector)> {
        self.check_theta(theta)?;
        let (v, g) = self.value_grad_impl(theta.as_slice(), None)?;
        finite_result(v, g, "gradient")
    }

    /// Loss and gradient over a subset of the view (minibatch). Analytic
    /// quadratics ignore the batch.
    pub fn batch_value_and_gradient(&self, theta: &ParamVector, batch: &[usize]) -> Result<(f64, ParamVector)> {
        self.check_theta(theta)?;
        if self.data.is_some() && batch.is_empty() {
            return Err(ForgeError::EmptyData("empty minibatch".into()));
        }
        let (v, g) = self.value_grad_impl(theta.as_slice(), Some(batch))?;
        finite_result(v, g, "minibatch gradient")
    }

    /// Hessian-vector product `∇²𝓛(θ)·v`.
    pub fn hvp(&self, theta: &ParamVector, v: &ParamVector) -> Result<ParamVector> {
        self.check_theta(theta)?;
        check_dims(self.dim(), v.dim())?;
        let out = self.hvp_slice(theta.as_slice(), v.as_slice())?;
        ParamVector::new(out)
    }

    /// HVP on raw slices; the direction need not be a valid `ParamVector`.
    pub(crate) fn hvp_slice(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let mut out = match &self.model {
            ModelSpec::Quadratic { spectrum, .. } => spectrum.iter().zip(v).map(|(l, vi)| l * vi).collect(),
            _ => {
                let (data, net) = self.require_data()?;
                let n = data.len();
                let mut out = vec![0.0; v.len()];
                let mut s = net.scratch();
                let scale = 1.0 / n as f64;
                for i in 0..n {
                    net.example_hvp(theta, v, data.input(i), data.targets.target(i), &mut s, &mut out, scale);
                }
                let wd = self.model.weight_decay();
                if wd > 0.0 {
                    out.iter_mut().zip(v).for_each(|(o, vi)| *o += wd * vi);
                }
                out
            }
        };
        if self.scale != 1.0 {
            out.iter_mut().for_each(|o| *o *= self.scale);
        }
        if !all_finite(&out) {
            return Err(ForgeError::NonFinite("Hessian-vector product".into()));
        }
        Ok(out)
    }

    fn value_impl(&self, theta: &[f64], batch: Option<&[usize]>) -> Result<f64> {
        let v = match &self.model {
            ModelSpec::Quadratic { spectrum, theta_star, l_star } => {
                quadratic_value(spectrum, theta_star, *l_star, theta)
            }
            _ => {
                let (data, net) = self.require_data()?;
                let mut s = net.scratch();
                let (sum, n) = match batch {
                    Some(b) => (
                        b.iter()
                            .map(|&i| net.example_loss_grad(theta, data.input(i), data.targets.target(i), &mut s, None))
                            .sum::<f64>(),
                        b.len(),
                    ),
                    None => (
                        (0..data.len())
                            .map(|i| net.example_loss_grad(theta, data.input(i), data.targets.target(i), &mut s, None))
                            .sum::<f64>(),
                        data.len(),
                    ),
                };
                sum / n as f64 + self.decay_value(theta)
            }
        };
        let v = self.scale * v;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ForgeError::NonFinite("objective value".into()))
        }
    }

    fn decay_value(&self, theta: &[f64]) -> f64 {
        let wd = self.model.weight_decay();
        if wd > 0.0 {
            0.5 * wd * theta.iter().map(|t| t * t).sum::<f64>()
        } else {
            0.0
        }
    }

    fn value_grad_impl(&self, theta: &[f64], batch: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        let (mut v, mut g) = match &self.model {
            ModelSpec::Quadratic { spectrum, theta_star, l_star } => {
                let g = spectrum
                    .iter()
                    .zip(theta.iter().zip(theta_star))
                    .map(|(l, (t, s))| l * (t - s))
                    .collect();
                (quadratic_value(spectrum, theta_star, *l_star, theta), g)
            }
            _ => {
                let (data, net) = self.require_data()?;
                let mut s = net.scratch();
                let mut g = vec![0.0; theta.len()];
                let all: Vec<usize>;
                let idx: &[usize] = match batch {
                    Some(b) => b,
                    None => {
                        all = (0..data.len()).collect();
                        &all
                    }
                };
                let scale = 1.0 / idx.len() as f64;
                let mut sum = 0.0;
                for &i in idx {
                    if i >= data.len() {
                        return Err(ForgeError::InvalidArgument(format!("batch index {i} out of range")));
                    }
                    sum += net.example_loss_grad(
                        theta,
                        data.input(i),
                        data.targets.target(i),
                        &mut s,
                        Some((&mut g, scale)),
                    );
                }
                let wd = self.model.weight_decay();
                if wd > 0.0 {
                    g.iter_mut().zip(theta).for_each(|(gi, t)| *gi += wd * t);
                }
                (sum * scale + self.decay_value(theta), g)
            }
        };
        if self.scale != 1.0 {
            v *= self.scale;
            g.iter_mut().for_each(|x| *x *= self.scale);
        }
        Ok((v, g))
    }

    /// Per-example losses (no weight decay, no scaling), in view order.
    pub fn per_example_losses(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let (data, net) = self.require_data()?;
        let mut s = net.scratch();
        let out: Vec<f64> = (0..data.len())
            .map(|i| net.example_loss_grad(theta.as_slice(), data.input(i), data.targets.target(i), &mut s, None))
            .collect();
        if all_finite(&out) {
            Ok(out)
        } else {
            Err(ForgeError::NonFinite("per-example losses".into()))
        }
    }

    /// Raw network outputs, row-major `n × output_dim`.
    pub fn outputs(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let (data, net) = self.require_data()?;
        let mut s = net.scratch();
        let mut out = Vec::with_capacity(data.len() * net.output_dim());
        for i in 0..data.len() {
            out.extend_from_slice(net.forward(theta.as_slice(), data.input(i), &mut s));
        }
        Ok(out)
    }

    /// Softmax probabilities, row-major `n × C`.
    pub fn probabilities(&self, theta: &ParamVector) -> Result<Vec<f64>> {
        let c = self.class_count()?;
        let logits = self.outputs(theta)?;
        Ok(logits.chunks(c).flat_map(softmax).collect())
    }

    /// Predicted classes (argmax, ties to the lowest index).
    pub fn predictions(&self, theta: &ParamVector) -> Result<Vec<usize>> {
        let c = self.class_count()?;
        Ok(self.outputs(theta)?.chunks(c).map(argmax).collect())
    }

    /// Fraction of argmax-correct predictions.
    pub fn accuracy(&self, theta: &ParamVector) -> Result<f64> {
        let labels = match &self.data {
            Some(DataView { targets: Targets::Classes { labels, .. }, .. }) => labels,
            _ => {
                return Err(ForgeError::Unsupported(
                    "accuracy requires a classification objective with hard labels".into(),
                ))
            }
        };
        let preds = self.predictions(theta)?;
        if preds.is_empty() {
            return Err(ForgeError::EmptyData("accuracy on empty view".into()));
        }
        let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(correct as f64 / preds.len() as f64)
    }

    fn class_count(&self) -> Result<usize> {
        if self.loss != LossKind::CrossEntropy {
            return Err(ForgeError::Unsupported("classification-only operation".into()));
        }
        Ok(self.model.num_classes().expect("classifier has classes"))
    }
}

fn quadratic_value(spectrum: &[f64], theta_star: &[f64], l_star: f64, theta: &[f64]) -> f64 {
    0.5 * spectrum
        .iter()
        .zip(theta.iter().zip(theta_star))
        .map(|(l, (t, s))| l * (t - s) * (t - s))
        .sum::<f64>()
        + l_star
}

fn finite_result(v: f64, g: Vec<f64>, what: &str) -> Result<(f64, ParamVector)> {
    if !v.is_finite() {
        return Err(ForgeError::NonFinite(format!("{what}: value")));
    }
    let g = ParamVector::new(g).map_err(|_| ForgeError::NonFinite(what.to_string()))?;
    Ok((v, g))
}
