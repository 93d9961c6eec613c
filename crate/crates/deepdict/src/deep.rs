//! Multi-layer training and encoding.
//!
//! Layers are trained greedily: the first dictionary factorizes the data,
//! each coefficient matrix becomes the next layer's input, and only the
//! final layer is sparse. The trained stack is immutable; encoding new
//! samples replays the same per-layer solvers with frozen dictionaries
//! (exact least squares through dense layers, fixed-iteration soft
//! thresholding from zero for the sparse layer). No nonlinearity is
//! inserted between layers: the coding step itself is the nonlinearity.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg::{frob_sq, fzeros, matmul, to_f};
use crate::shallow::{
    ista_sparse_code_warm, solve_coefficients_dense, train_layer_dense, train_layer_sparse,
    LayerFit, LayerTrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Sparse,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Sparse => "sparse",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub dictionary: Array2<f64>,
    pub kind: LayerKind,
}

/// A frozen stack of dictionaries plus the coding hyperparameters needed
/// to encode new samples.
#[derive(Debug, Clone)]
pub struct DeepDictModel {
    layers: Vec<Layer>,
    lambda: f64,
    ista_iters: usize,
    step_safety: f64,
}

impl DeepDictModel {
    pub fn new(
        layers: Vec<Layer>,
        lambda: f64,
        ista_iters: usize,
        step_safety: f64,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParam("a model needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            let (r, c) = layer.dictionary.dim();
            if r == 0 || c == 0 {
                return Err(Error::Dimension(format!("layer {} is empty ({r}x{c})", i + 1)));
            }
            if i > 0 && layers[i - 1].dictionary.ncols() != r {
                return Err(Error::Dimension(format!(
                    "layer {} expects {} input rows but layer {} produces {}",
                    i + 1,
                    r,
                    i,
                    layers[i - 1].dictionary.ncols()
                )));
            }
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::InvalidParam(format!(
                "lambda must be finite and nonnegative, got {lambda}"
            )));
        }
        if ista_iters == 0 {
            return Err(Error::InvalidParam("ista_iters must be positive".into()));
        }
        if !step_safety.is_finite() || step_safety < 1.0 {
            return Err(Error::InvalidParam(format!(
                "step safety must be at least 1, got {step_safety}"
            )));
        }
        Ok(Self {
            layers,
            lambda,
            ista_iters,
            step_safety,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Feature dimensionality expected of input samples.
    pub fn input_dim(&self) -> usize {
        self.layers[0].dictionary.nrows()
    }

    /// Dimensionality of encoded features (atom count of the last layer).
    pub fn feature_dim(&self) -> usize {
        self.layers.last().expect("nonempty").dictionary.ncols()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.dictionary.ncols()).collect()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn ista_iters(&self) -> usize {
        self.ista_iters
    }

    pub fn step_safety(&self) -> f64 {
        self.step_safety
    }
}

/// Per-layer hyperparameters for deep training. The atom counts live in
/// the per-layer configs; [`DeepTrainConfig::with_defaults`] builds the
/// standard stack where every layer before the last is dense.
#[derive(Debug, Clone)]
pub struct DeepTrainConfig {
    pub per_layer: Vec<LayerTrainConfig>,
}

impl DeepTrainConfig {
    pub fn with_defaults(layer_sizes: &[usize], lambda: f64) -> Self {
        let n = layer_sizes.len();
        let per_layer = layer_sizes
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                if i + 1 == n {
                    let mut c = LayerTrainConfig::sparse(k);
                    c.lambda = lambda;
                    c
                } else {
                    LayerTrainConfig::dense(k)
                }
            })
            .collect();
        Self { per_layer }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.per_layer.iter().map(|c| c.n_atoms).collect()
    }
}

/// What one trained layer reported.
#[derive(Debug, Clone)]
pub struct LayerReport {
    pub kind: LayerKind,
    pub atoms: usize,
    pub rounds: usize,
    pub objective: f64,
}

/// A trained model plus the training-time features of the final layer and
/// per-layer summaries.
#[derive(Debug)]
pub struct DeepFit {
    pub model: DeepDictModel,
    pub features: Array2<f64>,
    pub reports: Vec<LayerReport>,
}

fn check_chain(x: &Array2<f64>, sizes: &[usize]) -> Result<()> {
    let n = x.ncols();
    let mut rows = x.nrows();
    for (i, &k) in sizes.iter().enumerate() {
        if k == 0 {
            return Err(Error::InvalidParam(format!("layer {} has zero atoms", i + 1)));
        }
        if k > rows || k > n {
            return Err(Error::Dimension(format!(
                "layer {} requests {k} atoms but its input is {rows}x{n}; \
                 each width may not exceed the previous width or the sample count \
                 (for example 300,150,50 is a valid chain where 300,15,50 is not)",
                i + 1
            )));
        }
        rows = k;
    }
    Ok(())
}

/// Train a stack greedily: layer 1 on the data, each later layer on the
/// previous coefficients. All layers before the last are dense; the last
/// is sparse. Returns the frozen model, the final-layer training
/// coefficients, and per-layer reports.
pub fn train_deep(x: &Array2<f64>, cfg: &DeepTrainConfig) -> Result<DeepFit> {
    if cfg.per_layer.is_empty() {
        return Err(Error::InvalidParam("at least one layer is required".into()));
    }
    check_chain(x, &cfg.layer_sizes())?;
    let num = cfg.per_layer.len();
    let mut layers = Vec::with_capacity(num);
    let mut reports = Vec::with_capacity(num);
    let mut current: Option<Array2<f64>> = None;
    for (i, layer_cfg) in cfg.per_layer.iter().enumerate() {
        let input = current.as_ref().unwrap_or(x);
        let kind = if i + 1 == num {
            LayerKind::Sparse
        } else {
            LayerKind::Dense
        };
        let LayerFit {
            dictionary,
            coefficients,
            objective,
            rounds,
            ..
        } = match kind {
            LayerKind::Dense => train_layer_dense(input, layer_cfg)?,
            LayerKind::Sparse => train_layer_sparse(input, layer_cfg)?,
        };
        reports.push(LayerReport {
            kind,
            atoms: layer_cfg.n_atoms,
            rounds,
            objective,
        });
        layers.push(Layer { dictionary, kind });
        current = Some(coefficients);
    }
    let last = cfg.per_layer.last().expect("nonempty");
    let model = DeepDictModel::new(layers, last.lambda, last.ista_iters, last.step_safety)?;
    Ok(DeepFit {
        model,
        features: current.expect("at least one layer trained"),
        reports,
    })
}

/// Encode samples through the frozen stack: exact least squares for dense
/// layers, soft-thresholding iterations from zero (with the stored λ,
/// sweep count, and step safety) for the sparse layer.
pub fn encode(model: &DeepDictModel, x: &Array2<f64>) -> Result<Array2<f64>> {
    if x.nrows() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "samples have {} rows but the model expects {}",
            x.nrows(),
            model.input_dim()
        )));
    }
    let mut current: Option<Array2<f64>> = None;
    for layer in &model.layers {
        let input = current.as_ref().unwrap_or(x);
        let next = match layer.kind {
            LayerKind::Dense => solve_coefficients_dense(&layer.dictionary, input)?,
            LayerKind::Sparse => {
                let z0 = fzeros(layer.dictionary.ncols(), input.ncols());
                let (z, _) = ista_sparse_code_warm(
                    &layer.dictionary,
                    input,
                    model.lambda,
                    model.ista_iters,
                    model.step_safety,
                    &z0,
                )?;
                z
            }
        };
        current = Some(next);
    }
    Ok(current.expect("model has at least one layer"))
}

/// Synthesize samples from final-layer coefficients by multiplying the
/// dictionary chain right to left.
pub fn reconstruct(model: &DeepDictModel, z: &Array2<f64>) -> Result<Array2<f64>> {
    if z.nrows() != model.feature_dim() {
        return Err(Error::Dimension(format!(
            "coefficients have {} rows but the final layer has {} atoms",
            z.nrows(),
            model.feature_dim()
        )));
    }
    let mut out = to_f(z.view());
    for layer in model.layers.iter().rev() {
        out = matmul(layer.dictionary.view(), out.view());
    }
    Ok(out)
}

/// Relative Frobenius gap between two-stage coding and single-stage coding
/// against the product dictionary, for a two-layer all-dense model:
/// `‖Z_deep − Z_collapsed‖_F / ‖Z_deep‖_F`. A strictly positive value
/// shows the stack cannot be replaced by one dictionary. One-layer models
/// return 0 by definition.
pub fn collapse_check(model: &DeepDictModel, x: &Array2<f64>) -> Result<f64> {
    if x.nrows() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "samples have {} rows but the model expects {}",
            x.nrows(),
            model.input_dim()
        )));
    }
    if model.num_layers() == 1 {
        return Ok(0.0);
    }
    if model.num_layers() != 2
        || model.layers.iter().any(|l| l.kind != LayerKind::Dense)
    {
        return Err(Error::InvalidParam(
            "the analytic collapse check needs a two-layer all-dense model".into(),
        ));
    }
    let d1 = &model.layers[0].dictionary;
    let d2 = &model.layers[1].dictionary;
    let z1 = solve_coefficients_dense(d1, x)?;
    let z_deep = solve_coefficients_dense(d2, &z1)?;
    let product = matmul(d1.view(), d2.view());
    let z_collapsed = solve_coefficients_dense(&product, x)?;
    let mut diff = z_deep.clone();
    diff -= &z_collapsed;
    let denom = frob_sq(z_deep.view()).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(frob_sq(diff.view()).sqrt() / denom)
}
