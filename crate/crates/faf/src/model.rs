//! The forecasting network: a shared generalized-knowledge MLP, a bank of
//! task-specific functional regions, a softmax ranking router with top-k
//! selection, and an affine fusion head, plus parameter accounting.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FafError, Result};
use crate::numerics::tape::{NodeId, Tape};
use crate::numerics::tensor::{linear_forward, relu, softmax, Parameter, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_len: usize,
    pub output_len: usize,
    /// Number of functional regions (the ablation tables' R).
    pub num_regions: usize,
    /// Regions activated per input.
    pub top_k: usize,
    /// Hidden width of the generalized module; 0 means a single linear layer.
    pub hidden_general: usize,
    /// Hidden width of each functional region; 0 means a single linear layer.
    pub hidden_region: usize,
    /// The ablation tables' S flag: whether the generalized module exists.
    pub use_generalized: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_len: 16,
            output_len: 8,
            num_regions: 16,
            top_k: 2,
            hidden_general: 32,
            hidden_region: 8,
            use_generalized: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 || self.output_len == 0 {
            return Err(FafError::Config("input_len and output_len must be positive".into()));
        }
        if self.num_regions == 0 {
            return Err(FafError::Config("num_regions must be at least 1".into()));
        }
        if self.top_k == 0 || self.top_k > self.num_regions {
            return Err(FafError::Config(format!(
                "top_k must be in [1, num_regions]; got top_k = {}, num_regions = {}",
                self.top_k, self.num_regions
            )));
        }
        Ok(())
    }
}

/// An MLP described by its layer parameter indices into the model's
/// parameter store: `layers[i] = (weight_idx, bias_idx)`, ReLU between
/// layers, identity on the output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<(usize, usize)>,
    pub dims: Vec<usize>,
}

impl Mlp {
    pub fn param_indices(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|(w, b)| [*w, *b]).collect()
    }
}

/// The router's output for one input window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    /// Softmax probabilities over all regions.
    pub probabilities: Vec<f64>,
    /// The k selected region indices (0-based), ties broken by lower index.
    pub active: Vec<usize>,
    /// Probabilities renormalized over the active set; sums to 1.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub total: usize,
    pub active: usize,
}

/// Adapted copy of the generalized module's parameters, in layer order
/// `[w0, b0, w1, b1, ...]`.
pub type AdaptedGkm = Vec<Tensor>;

#[derive(Debug, Clone)]
pub struct FafModel {
    pub config: ModelConfig,
    params: Vec<Parameter>,
    generalized: Option<Mlp>,
    regions: Vec<Mlp>,
    rank_w: usize,
    rank_b: usize,
    fusion_w: usize,
    fusion_b: usize,
}

/// Result of a taped forward: the prediction node, the routing
/// probability node (for soft usage counts), and the hard decision.
pub struct TapedPrediction {
    pub output: NodeId,
    pub probabilities: NodeId,
    pub decision: RoutingDecision,
}

fn mlp_dims(in_dim: usize, hidden: usize, out_dim: usize) -> Vec<usize> {
    if hidden == 0 {
        vec![in_dim, out_dim]
    } else {
        vec![in_dim, hidden, out_dim]
    }
}

fn mlp_param_count(in_dim: usize, hidden: usize, out_dim: usize) -> usize {
    mlp_dims(in_dim, hidden, out_dim)
        .windows(2)
        .map(|d| d[0] * d[1] + d[1])
        .sum()
}

impl FafModel {
    /// Builds a model with all weights drawn from U(-1/sqrt(fan_in),
    /// 1/sqrt(fan_in)) and the fusion head initialized to the identity
    /// affine map so early training is dominated by the additive
    /// composition.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: Vec<Parameter> = Vec::new();

        let init_linear = |params: &mut Vec<Parameter>,
                               name: String,
                               rows: usize,
                               cols: usize,
                               rng: &mut ChaCha8Rng|
         -> (usize, usize) {
            let bound = 1.0 / (cols as f64).sqrt();
            let w: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            let b: Vec<f64> = (0..rows).map(|_| rng.gen_range(-bound..bound)).collect();
            params.push(Parameter::new(format!("{name}.w"), Tensor::matrix(rows, cols, w).unwrap()));
            params.push(Parameter::new(format!("{name}.b"), Tensor::vector(b)));
            (params.len() - 2, params.len() - 1)
        };

        let build_mlp = |params: &mut Vec<Parameter>,
                             name: &str,
                             dims: Vec<usize>,
                             rng: &mut ChaCha8Rng|
         -> Mlp {
            let layers = dims
                .windows(2)
                .enumerate()
                .map(|(i, d)| init_linear(params, format!("{name}.l{i}"), d[1], d[0], rng))
                .collect();
            Mlp { layers, dims }
        };

        let generalized = if config.use_generalized {
            Some(build_mlp(
                &mut params,
                "generalized",
                mlp_dims(config.input_len, config.hidden_general, config.output_len),
                &mut rng,
            ))
        } else {
            None
        };

        let regions = (0..config.num_regions)
            .map(|j| {
                build_mlp(
                    &mut params,
                    &format!("region{j}"),
                    mlp_dims(config.input_len, config.hidden_region, config.output_len),
                    &mut rng,
                )
            })
            .collect();

        let (rank_w, rank_b) =
            init_linear(&mut params, "rank".into(), config.num_regions, config.input_len, &mut rng);

        // identity-with-zero-bias fusion init
        let out = config.output_len;
        let mut eye = vec![0.0; out * out];
        for i in 0..out {
            eye[i * out + i] = 1.0;
        }
        params.push(Parameter::new("fusion.w", Tensor::matrix(out, out, eye).unwrap()));
        params.push(Parameter::new("fusion.b", Tensor::vector(vec![0.0; out])));
        let fusion_w = params.len() - 2;
        let fusion_b = params.len() - 1;

        Ok(FafModel { config, params, generalized, regions, rank_w, rank_b, fusion_w, fusion_b })
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    /// Parameter indices of the generalized module, in layer order.
    pub fn generalized_param_indices(&self) -> Vec<usize> {
        self.generalized.as_ref().map(|m| m.param_indices()).unwrap_or_default()
    }

    pub fn region_param_indices(&self, j: usize) -> Vec<usize> {
        self.regions[j].param_indices()
    }

    pub fn rank_param_indices(&self) -> Vec<usize> {
        vec![self.rank_w, self.rank_b]
    }

    pub fn fusion_param_indices(&self) -> Vec<usize> {
        vec![self.fusion_w, self.fusion_b]
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.len() != self.config.input_len {
            return Err(FafError::ShapeMismatch {
                expected: vec![self.config.input_len],
                got: vec![x.len()],
                context: "model input".into(),
            });
        }
        Ok(())
    }

    fn mlp_forward(&self, mlp: &Mlp, x: &Tensor, overrides: Option<&[Tensor]>) -> Result<Tensor> {
        let mut h = x.clone();
        let n_layers = mlp.layers.len();
        for (i, (wi, bi)) in mlp.layers.iter().enumerate() {
            let (w, b) = match overrides {
                Some(vals) => (&vals[2 * i], &vals[2 * i + 1]),
                None => (&self.params[*wi].value, &self.params[*bi].value),
            };
            h = linear_forward(&h, w, b)?;
            if i + 1 < n_layers {
                h = relu(&h);
            }
        }
        Ok(h)
    }

    /// Forward through the generalized module, optionally with adapted
    /// parameters in place of the stored ones.
    pub fn generalized_forward(&self, x: &Tensor, adapted: Option<&AdaptedGkm>) -> Result<Tensor> {
        self.check_input(x)?;
        let mlp = self.generalized.as_ref().ok_or_else(|| {
            FafError::Config("generalized module disabled (use_generalized = false)".into())
        })?;
        self.mlp_forward(mlp, x, adapted.map(|v| v.as_slice()))
    }

    /// Forward through region `j` (0-based) only.
    pub fn region_forward(&self, j: usize, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mlp = self.regions.get(j).ok_or_else(|| {
            FafError::Config(format!(
                "region index {j} out of range (num_regions = {})",
                self.config.num_regions
            ))
        })?;
        self.mlp_forward(mlp, x, None)
    }

    /// Top-k indices by probability, ties broken by lower index.
    pub fn top_k_indices(p: &[f64], k: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|a, b| p[*b].partial_cmp(&p[*a]).unwrap().then(a.cmp(b)));
        let mut active = order[..k].to_vec();
        active.sort_unstable();
        active
    }

    fn decision_from_probs(&self, p: Vec<f64>) -> RoutingDecision {
        let active = Self::top_k_indices(&p, self.config.top_k);
        let mass: f64 = active.iter().map(|j| p[*j]).sum();
        let weights = active.iter().map(|j| p[*j] / mass).collect();
        RoutingDecision { probabilities: p, active, weights }
    }

    /// Routing: p = softmax(W_r x + b), top-k selection, renormalized
    /// weights over the active set.
    pub fn rank(&self, x: &Tensor) -> Result<RoutingDecision> {
        self.check_input(x)?;
        let scores =
            linear_forward(x, &self.params[self.rank_w].value, &self.params[self.rank_b].value)?;
        let p = softmax(&scores);
        Ok(self.decision_from_probs(p.data().to_vec()))
    }

    /// Full prediction: fusion(S * generalized(x) + sum_j w_j * region_j(x)).
    pub fn compose_predict(
        &self,
        x: &Tensor,
        adapted: Option<&AdaptedGkm>,
    ) -> Result<(Tensor, RoutingDecision)> {
        self.check_input(x)?;
        let decision = self.rank(x)?;
        let mut acc = vec![0.0; self.config.output_len];
        if self.config.use_generalized {
            let z = self.generalized_forward(x, adapted)?;
            for (a, v) in acc.iter_mut().zip(z.data()) {
                *a += v;
            }
        }
        for (j, w) in decision.active.iter().zip(&decision.weights) {
            let y = self.region_forward(*j, x)?;
            for (a, v) in acc.iter_mut().zip(y.data()) {
                *a += w * v;
            }
        }
        let fused = linear_forward(
            &Tensor::vector(acc),
            &self.params[self.fusion_w].value,
            &self.params[self.fusion_b].value,
        )?;
        fused.check_finite("compose_predict output")?;
        Ok((fused, decision))
    }

    fn mlp_forward_tape(
        tape: &mut Tape,
        params: &[Parameter],
        layers: &[(usize, usize)],
        dims: &[usize],
        x: NodeId,
    ) -> NodeId {
        let mut h = x;
        for (i, (wi, bi)) in layers.iter().enumerate() {
            let w = tape.param(params, *wi);
            let b = tape.param(params, *bi);
            h = tape.linear(h, w, b, dims[i + 1], dims[i]);
            if i + 1 < layers.len() {
                h = tape.relu(h);
            }
        }
        h
    }

    /// Taped forward of the generalized module against an external
    /// parameter store (layer order `[w0, b0, w1, b1, ...]`); used by
    /// fast adaptation where gradients flow into a cloned copy.
    pub fn generalized_forward_tape_external(
        &self,
        tape: &mut Tape,
        external: &[Parameter],
        x: &[f64],
    ) -> Result<NodeId> {
        let mlp = self.generalized.as_ref().ok_or_else(|| {
            FafError::Config("generalized module disabled (use_generalized = false)".into())
        })?;
        let x_node = tape.constant(x.to_vec());
        let layers: Vec<(usize, usize)> = (0..mlp.layers.len()).map(|i| (2 * i, 2 * i + 1)).collect();
        Ok(Self::mlp_forward_tape(tape, external, &layers, &mlp.dims, x_node))
    }

    /// Taped full forward for training. Routing is hard top-k: the active
    /// set is fixed from the forward probabilities, gradients flow into
    /// the router only through the gathered entries.
    pub fn compose_on_tape(&self, tape: &mut Tape, x: &[f64]) -> Result<TapedPrediction> {
        if x.len() != self.config.input_len {
            return Err(FafError::ShapeMismatch {
                expected: vec![self.config.input_len],
                got: vec![x.len()],
                context: "model input".into(),
            });
        }
        let x_node = tape.constant(x.to_vec());

        let rw = tape.param(&self.params, self.rank_w);
        let rb = tape.param(&self.params, self.rank_b);
        let scores = tape.linear(x_node, rw, rb, self.config.num_regions, self.config.input_len);
        let probs = tape.softmax(scores);
        let decision = self.decision_from_probs(tape.value(probs).to_vec());

        let active_p = tape.gather(probs, decision.active.clone());
        let mass = tape.sum(active_p);
        let weights = tape.div_scalar(active_p, mass);

        let mut acc: Option<NodeId> = None;
        if let Some(mlp) = &self.generalized {
            let z = Self::mlp_forward_tape(tape, &self.params, &mlp.layers, &mlp.dims, x_node);
            acc = Some(z);
        }
        for (slot, j) in decision.active.iter().enumerate() {
            let mlp = &self.regions[*j];
            let y = Self::mlp_forward_tape(tape, &self.params, &mlp.layers, &mlp.dims, x_node);
            let wj = tape.gather(weights, vec![slot]);
            let weighted = tape.scale_vec(wj, y);
            acc = Some(match acc {
                Some(a) => tape.add(a, weighted),
                None => weighted,
            });
        }
        let acc = acc.expect("at least one active region");

        let fw = tape.param(&self.params, self.fusion_w);
        let fb = tape.param(&self.params, self.fusion_b);
        let out = tape.linear(acc, fw, fb, self.config.output_len, self.config.output_len);
        Ok(TapedPrediction { output: out, probabilities: probs, decision })
    }

    /// Closed-form total and active parameter counts from the config.
    pub fn count_from_config(config: &ModelConfig) -> ParamCounts {
        let gkm = if config.use_generalized {
            mlp_param_count(config.input_len, config.hidden_general, config.output_len)
        } else {
            0
        };
        let region = mlp_param_count(config.input_len, config.hidden_region, config.output_len);
        let rank = config.num_regions * config.input_len + config.num_regions;
        let fusion = config.output_len * config.output_len + config.output_len;
        ParamCounts {
            total: gkm + config.num_regions * region + rank + fusion,
            active: gkm + config.top_k * region + rank + fusion,
        }
    }

    pub fn count_parameters(&self) -> ParamCounts {
        let counts = Self::count_from_config(&self.config);
        debug_assert_eq!(counts.total, self.params.iter().map(|p| p.value.len()).sum::<usize>());
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            input_len: 4,
            output_len: 2,
            num_regions: 4,
            top_k: 2,
            hidden_general: 6,
            hidden_region: 3,
            use_generalized: true,
        }
    }

    #[test]
    fn zeroed_final_layer_gives_zero_output() {
        let mut m = FafModel::new(small_config(), 0).unwrap();
        let idx = m.generalized_param_indices();
        // last layer weight and bias
        let (lw, lb) = (idx[idx.len() - 2], idx[idx.len() - 1]);
        m.params_mut()[lw].value.fill(0.0);
        m.params_mut()[lb].value.fill(0.0);
        let z = m.generalized_forward(&Tensor::vector(vec![1.0, -2.0, 3.0, 0.5]), None).unwrap();
        assert_eq!(z.data(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer_returns_input() {
        let cfg = ModelConfig {
            input_len: 3,
            output_len: 3,
            hidden_general: 0,
            ..small_config()
        };
        let mut m = FafModel::new(cfg, 0).unwrap();
        let idx = m.generalized_param_indices();
        assert_eq!(idx.len(), 2);
        let n = 3;
        let mut eye = vec![0.0; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        m.params_mut()[idx[0]].value = Tensor::matrix(n, n, eye).unwrap();
        m.params_mut()[idx[1]].value.fill(0.0);
        let x = Tensor::vector(vec![0.5, -1.0, 2.0]);
        assert_eq!(m.generalized_forward(&x, None).unwrap().data(), x.data());
    }

    #[test]
    fn seeded_forward_is_reproducible() {
        let x = Tensor::vector(vec![0.1, 0.2, 0.3, 0.4]);
        let a = FafModel::new(small_config(), 0).unwrap();
        let b = FafModel::new(small_config(), 0).unwrap();
        assert_eq!(
            a.generalized_forward(&x, None).unwrap().data(),
            b.generalized_forward(&x, None).unwrap().data()
        );
        let c = FafModel::new(small_config(), 1).unwrap();
        assert_ne!(
            a.generalized_forward(&x, None).unwrap().data(),
            c.generalized_forward(&x, None).unwrap().data()
        );
    }

    #[test]
    fn region_isolation() {
        let mut m = FafModel::new(small_config(), 3).unwrap();
        let x = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]);
        let before = m.region_forward(0, &x).unwrap();
        for idx in m.region_param_indices(1) {
            m.params_mut()[idx].value.fill(9.9);
        }
        let after = m.region_forward(0, &x).unwrap();
        assert_eq!(before.data(), after.data());
        assert!(m.region_forward(7, &x).is_err());
    }

    #[test]
    fn identical_regions_give_identical_outputs() {
        let mut m = FafModel::new(small_config(), 3).unwrap();
        let src: Vec<usize> = m.region_param_indices(0);
        let dst: Vec<usize> = m.region_param_indices(1);
        for (s, d) in src.iter().zip(&dst) {
            let v = m.params()[*s].value.clone();
            m.params_mut()[*d].value = v;
        }
        let x = Tensor::vector(vec![0.3, -0.1, 0.7, 0.2]);
        assert_eq!(m.region_forward(0, &x).unwrap().data(), m.region_forward(1, &x).unwrap().data());
    }

    #[test]
    fn rank_tie_break_and_renormalization() {
        let mut m = FafModel::new(small_config(), 0).unwrap();
        // equal logits: zero rank weights and bias
        let [rw, rb] = [m.rank_param_indices()[0], m.rank_param_indices()[1]];
        m.params_mut()[rw].value.fill(0.0);
        m.params_mut()[rb].value.fill(0.0);
        let d = m.rank(&Tensor::vector(vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(d.active, vec![0, 1]);
        assert_eq!(d.weights, vec![0.5, 0.5]);

        // p = [0.5, 0.3, 0.2, ~0], k = 2 -> weights 0.625 / 0.375
        let d = m.decision_from_probs(vec![0.5, 0.3, 0.2, 0.0]);
        assert_eq!(d.active, vec![0, 1]);
        assert!((d.weights[0] - 0.625).abs() < 1e-12);
        assert!((d.weights[1] - 0.375).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_uses_all_regions() {
        let cfg = ModelConfig { top_k: 4, ..small_config() };
        let m = FafModel::new(cfg, 0).unwrap();
        let d = m.rank(&Tensor::vector(vec![0.5, -0.5, 1.0, 0.0])).unwrap();
        assert_eq!(d.active, vec![0, 1, 2, 3]);
        for (w, p) in d.weights.iter().zip(&d.probabilities) {
            assert!((w - p).abs() < 1e-12);
        }
    }

    #[test]
    fn compose_reduces_to_generalized_when_regions_zero() {
        let mut m = FafModel::new(small_config(), 0).unwrap();
        for j in 0..4 {
            for idx in m.region_param_indices(j) {
                m.params_mut()[idx].value.fill(0.0);
            }
        }
        let x = Tensor::vector(vec![0.4, 0.1, -0.2, 0.9]);
        let z = m.generalized_forward(&x, None).unwrap();
        let (y, _) = m.compose_predict(&x, None).unwrap();
        for (a, b) in y.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn no_generalized_flag_drops_gkm_path() {
        let cfg = ModelConfig { use_generalized: false, ..small_config() };
        let m = FafModel::new(cfg, 0).unwrap();
        assert!(m.generalized_forward(&Tensor::vector(vec![0.0; 4]), None).is_err());
        let (y, d) = m.compose_predict(&Tensor::vector(vec![1.0, 0.0, 0.0, 0.0]), None).unwrap();
        // output is the fused weighted sum of routed regions only
        let mut acc = vec![0.0; 2];
        for (j, w) in d.active.iter().zip(&d.weights) {
            let r = m.region_forward(*j, &Tensor::vector(vec![1.0, 0.0, 0.0, 0.0])).unwrap();
            for (a, v) in acc.iter_mut().zip(r.data()) {
                *a += w * v;
            }
        }
        let fused = linear_forward(
            &Tensor::vector(acc),
            &m.params()[m.fusion_w].value,
            &m.params()[m.fusion_b].value,
        )
        .unwrap();
        assert_eq!(y.data(), fused.data());
    }

    #[test]
    fn single_expert_weight_is_one() {
        let cfg = ModelConfig { top_k: 1, ..small_config() };
        let m = FafModel::new(cfg, 2).unwrap();
        let d = m.rank(&Tensor::vector(vec![0.2, 0.8, -0.3, 0.1])).unwrap();
        assert_eq!(d.weights, vec![1.0]);
        let argmax = d
            .probabilities
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(d.active, vec![argmax]);
    }

    #[test]
    fn taped_forward_matches_plain_forward() {
        let m = FafModel::new(small_config(), 11).unwrap();
        let x = vec![0.7, -0.3, 0.2, 1.1];
        let (plain, plain_d) = m.compose_predict(&Tensor::vector(x.clone()), None).unwrap();
        let mut tape = Tape::new();
        let taped = m.compose_on_tape(&mut tape, &x).unwrap();
        assert_eq!(taped.decision, plain_d);
        for (a, b) in tape.value(taped.output).iter().zip(plain.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn top_k_shift_invariance() {
        let logits = vec![0.3, -1.2, 0.9, 0.1];
        for shift in [-50.0, 0.0, 17.0] {
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let p = softmax(&Tensor::vector(shifted));
            assert_eq!(FafModel::top_k_indices(p.data(), 2), vec![0, 2]);
        }
    }

    #[test]
    fn parameter_counts() {
        // single linear 3 -> 2: 8 parameters
        let cfg = ModelConfig {
            input_len: 3,
            output_len: 2,
            num_regions: 1,
            top_k: 1,
            hidden_general: 0,
            hidden_region: 0,
            use_generalized: false,
        };
        let counts = FafModel::count_from_config(&cfg);
        // one region (8) + rank (3 + 1) + fusion (4 + 2)
        assert_eq!(counts.total, 8 + 4 + 6);
        assert_eq!(counts.active, counts.total);

        let cfg = small_config();
        let m = FafModel::new(cfg.clone(), 0).unwrap();
        let counts = m.count_parameters();
        let actual: usize = m.params().iter().map(|p| p.value.len()).sum();
        assert_eq!(counts.total, actual);
        assert!(counts.active < counts.total);

        // k = N and S = 1 -> active == total
        let cfg = ModelConfig { top_k: 4, ..cfg };
        let counts = FafModel::count_from_config(&cfg);
        assert_eq!(counts.active, counts.total);
    }
}
