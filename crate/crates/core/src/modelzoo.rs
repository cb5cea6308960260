//! Wide, deep and wide & deep offer classifiers assembled from `ndnum` ops.
//!
//! Offers are 1-based at this module's boundary and 0-based class indices
//! inside the networks.
//!
//! * Wide: the user×campaign cross-product one-hot is never materialized; the
//!   linear map is a `(n_customers·n_campaigns) × n_offers` lookup table.
//! * Deep: variant-dependent input (see [`DeepInput`]) feeding a ReLU stack
//!   and a dense logit layer.
//! * Wide & deep: a ReLU stack over the four known features, an optional
//!   multi-head ReLU layer followed by dropout, a dense logit layer, plus the
//!   wide lookup added to the logits before the softmax.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndnum::{
    init_dense, init_embedding, softmax, DropoutMode, Graph, NodeId, ParamId, ParamStore,
    Parameter, Tensor,
};
use crate::rng::Stream;
use crate::synthgen::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Wide,
    Deep,
    WideDeep,
}

/// Input set of the deep-only model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeepInput {
    /// User and campaign ID embeddings.
    Embeddings = 1,
    /// Customer features 1 & 2 and campaign features 1 & 2.
    KnownFeatures = 2,
    /// Known features plus both ID embeddings.
    KnownAndEmbeddings = 3,
    /// Known features plus both hidden features.
    KnownAndHidden = 4,
}

impl DeepInput {
    pub fn from_variant(v: u8) -> Option<Self> {
        match v {
            1 => Some(Self::Embeddings),
            2 => Some(Self::KnownFeatures),
            3 => Some(Self::KnownAndEmbeddings),
            4 => Some(Self::KnownAndHidden),
            _ => None,
        }
    }

    fn uses_known(self) -> bool {
        !matches!(self, Self::Embeddings)
    }

    fn uses_embeddings(self) -> bool {
        matches!(self, Self::Embeddings | Self::KnownAndEmbeddings)
    }

    fn uses_hidden(self) -> bool {
        matches!(self, Self::KnownAndHidden)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// 1..=4, deep models only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deep_input_variant: Option<u8>,
    #[serde(default = "defaults::hidden_widths")]
    pub hidden_widths: Vec<usize>,
    #[serde(default = "defaults::user_embed_dim")]
    pub user_embed_dim: usize,
    #[serde(default = "defaults::campaign_embed_dim")]
    pub campaign_embed_dim: usize,
    #[serde(default = "defaults::n_offers")]
    pub n_offers: usize,
    pub n_customers: usize,
    pub n_campaigns: usize,
    /// Multi-head layer (wide & deep only).
    #[serde(default = "defaults::multihead")]
    pub multihead: bool,
    #[serde(default = "defaults::multihead_width")]
    pub multihead_width: usize,
    #[serde(default = "defaults::multihead_dropout_p")]
    pub multihead_dropout_p: f64,
}

mod defaults {
    pub fn hidden_widths() -> Vec<usize> {
        vec![512, 256, 128]
    }
    pub fn user_embed_dim() -> usize {
        16
    }
    pub fn campaign_embed_dim() -> usize {
        7
    }
    pub fn n_offers() -> usize {
        10
    }
    pub fn multihead() -> bool {
        true
    }
    pub fn multihead_width() -> usize {
        128
    }
    pub fn multihead_dropout_p() -> f64 {
        0.3
    }
}

impl ModelSpec {
    fn base(kind: ModelKind, n_customers: usize, n_campaigns: usize) -> Self {
        Self {
            kind,
            deep_input_variant: None,
            hidden_widths: defaults::hidden_widths(),
            user_embed_dim: defaults::user_embed_dim(),
            campaign_embed_dim: defaults::campaign_embed_dim(),
            n_offers: defaults::n_offers(),
            n_customers,
            n_campaigns,
            multihead: kind == ModelKind::WideDeep,
            multihead_width: defaults::multihead_width(),
            multihead_dropout_p: defaults::multihead_dropout_p(),
        }
    }

    pub fn wide(n_customers: usize, n_campaigns: usize) -> Self {
        Self::base(ModelKind::Wide, n_customers, n_campaigns)
    }

    pub fn deep(variant: u8, n_customers: usize, n_campaigns: usize) -> Self {
        Self {
            deep_input_variant: Some(variant),
            ..Self::base(ModelKind::Deep, n_customers, n_campaigns)
        }
    }

    pub fn wide_deep(n_customers: usize, n_campaigns: usize) -> Self {
        Self::base(ModelKind::WideDeep, n_customers, n_campaigns)
    }

    pub fn with_hidden(mut self, widths: &[usize]) -> Self {
        self.hidden_widths = widths.to_vec();
        self
    }

    pub fn deep_input(&self) -> Option<DeepInput> {
        self.deep_input_variant.and_then(DeepInput::from_variant)
    }

    /// Human-readable label such as `deep-v3` or `wide_deep`.
    pub fn label(&self) -> String {
        match self.kind {
            ModelKind::Wide => "wide".into(),
            ModelKind::Deep => format!("deep-v{}", self.deep_input_variant.unwrap_or(0)),
            ModelKind::WideDeep => "wide_deep".into(),
        }
    }

    pub fn n_cross(&self) -> usize {
        self.n_customers * self.n_campaigns
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_customers == 0 || self.n_campaigns == 0 {
            v.push("n_customers and n_campaigns must be positive".into());
        }
        if self.n_offers < 2 {
            v.push(format!("n_offers must be at least 2, got {}", self.n_offers));
        }
        match (self.kind, self.deep_input_variant) {
            (ModelKind::Deep, None) => v.push("deep model needs deep_input_variant".into()),
            (ModelKind::Deep, Some(x)) if !(1..=4).contains(&x) => {
                v.push(format!("deep_input_variant must be in 1..=4, got {x}"))
            }
            (ModelKind::Wide | ModelKind::WideDeep, Some(x)) => v.push(format!(
                "deep_input_variant {x} is only meaningful for deep models"
            )),
            _ => {}
        }
        if self.kind != ModelKind::Wide {
            if self.hidden_widths.is_empty() {
                v.push("hidden_widths must be nonempty".into());
            }
            if self.hidden_widths.contains(&0) {
                v.push("hidden widths must be positive".into());
            }
        }
        if self.user_embed_dim == 0 || self.campaign_embed_dim == 0 {
            v.push("embedding dims must be at least 1".into());
        }
        if self.multihead_width == 0 {
            v.push("multihead_width must be positive".into());
        }
        if !(0.0..1.0).contains(&self.multihead_dropout_p) {
            v.push(format!(
                "multihead_dropout_p must lie in [0, 1), got {}",
                self.multihead_dropout_p
            ));
        }
        if self.multihead && self.kind != ModelKind::WideDeep {
            v.push("multihead is only available on wide_deep models".into());
        }
        v
    }

    /// Width of the first dense layer's input.
    pub fn deep_input_width(&self) -> usize {
        match self.kind {
            ModelKind::Wide => 0,
            ModelKind::WideDeep => 4,
            ModelKind::Deep => match self.deep_input() {
                Some(DeepInput::Embeddings) => self.user_embed_dim + self.campaign_embed_dim,
                Some(DeepInput::KnownFeatures) => 4,
                Some(DeepInput::KnownAndEmbeddings) => {
                    4 + self.user_embed_dim + self.campaign_embed_dim
                }
                Some(DeepInput::KnownAndHidden) => 6,
                None => 0,
            },
        }
    }

    /// Closed-form number of trainable scalars.
    pub fn expected_param_count(&self) -> usize {
        let k = self.n_offers;
        let wide = self.n_cross() * k;
        if self.kind == ModelKind::Wide {
            return wide;
        }
        let mut count = 0;
        let mut fan_in = self.deep_input_width();
        for &h in &self.hidden_widths {
            count += fan_in * h + h;
            fan_in = h;
        }
        if self.kind == ModelKind::Deep {
            if self.deep_input().is_some_and(DeepInput::uses_embeddings) {
                count += self.n_customers * self.user_embed_dim
                    + self.n_campaigns * self.campaign_embed_dim;
            }
            return count + fan_in * k + k;
        }
        if self.multihead {
            count += fan_in * self.multihead_width + self.multihead_width;
            fan_in = self.multihead_width;
        }
        count + fan_in * k + k + wide
    }
}

/// `user_id · n_campaigns + campaign_id`.
pub fn cross_index(user_id: usize, campaign_id: usize, n_customers: usize, n_campaigns: usize) -> Result<usize> {
    if user_id >= n_customers {
        return Err(Error::Lookup {
            id: user_id,
            len: n_customers,
        });
    }
    if campaign_id >= n_campaigns {
        return Err(Error::Lookup {
            id: campaign_id,
            len: n_campaigns,
        });
    }
    Ok(user_id * n_campaigns + campaign_id)
}

/// Everything a model may consume for one interaction.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub user_id: usize,
    pub campaign_id: usize,
    /// cust_f1, cust_f2, camp_f1, camp_f2
    pub known_features: [f64; 4],
    /// cust_hidden, camp_hidden (deep variant 4 only)
    pub hidden_features: [f64; 2],
}

impl From<&Sample> for ModelInput {
    fn from(s: &Sample) -> Self {
        Self {
            user_id: s.user_id,
            campaign_id: s.campaign_id,
            known_features: [s.cust_f1, s.cust_f2, s.camp_f1, s.camp_f2],
            hidden_features: [s.cust_hidden, s.camp_hidden],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Layout {
    user_embed: Option<ParamId>,
    campaign_embed: Option<ParamId>,
    hidden: Vec<(ParamId, ParamId)>,
    multihead: Option<(ParamId, ParamId)>,
    output: Option<(ParamId, ParamId)>,
    wide: Option<ParamId>,
}

/// Output of the network up to (and including) the multi-head activation.
///
/// Stochastic passes only need to run the dropout and output layers on top of it.
#[derive(Clone, Debug, PartialEq)]
pub struct Prefix {
    /// `[batch, head_width]` activation entering the dropout layer.
    pub head_input: Tensor,
    /// `[batch, n_offers]` wide contribution, if any.
    pub wide_logits: Option<Tensor>,
}

/// A built model: its spec and its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: ParamStore,
    layout: Layout,
}

/// Builds `spec` with weights drawn from `init_seed`.
pub fn build(spec: &ModelSpec, init_seed: u64) -> Result<Model> {
    let v = spec.violations();
    if !v.is_empty() {
        return Err(Error::Build(v.join("; ")));
    }
    let mut rng = Stream::new(init_seed);
    let mut params = ParamStore::new();
    let mut layout = Layout::default();
    let k = spec.n_offers;

    if let Some(input) = spec.deep_input().filter(|i| i.uses_embeddings()) {
        debug_assert!(input.uses_embeddings());
        layout.user_embed = Some(params.add(Parameter::new(
            "user_embed",
            init_embedding(spec.n_customers, spec.user_embed_dim, &mut rng),
        )));
        layout.campaign_embed = Some(params.add(Parameter::new(
            "campaign_embed",
            init_embedding(spec.n_campaigns, spec.campaign_embed_dim, &mut rng),
        )));
    }
    let mut fan_in = spec.deep_input_width();
    if spec.kind != ModelKind::Wide {
        for (i, &h) in spec.hidden_widths.iter().enumerate() {
            let w = params.add(Parameter::new(format!("hidden{i}.w"), init_dense(fan_in, h, &mut rng)));
            let b = params.add(Parameter::new(format!("hidden{i}.b"), Tensor::zeros(&[h])));
            layout.hidden.push((w, b));
            fan_in = h;
        }
        if spec.kind == ModelKind::WideDeep && spec.multihead {
            let m = spec.multihead_width;
            let w = params.add(Parameter::new("multihead.w", init_dense(fan_in, m, &mut rng)));
            let b = params.add(Parameter::new("multihead.b", Tensor::zeros(&[m])));
            layout.multihead = Some((w, b));
            fan_in = m;
        }
        let w = params.add(Parameter::new("output.w", init_dense(fan_in, k, &mut rng)));
        let b = params.add(Parameter::new("output.b", Tensor::zeros(&[k])));
        layout.output = Some((w, b));
    }
    if spec.kind != ModelKind::Deep {
        // one-hot cross input of width n_cross feeding n_offers outputs
        layout.wide = Some(params.add(Parameter::new(
            "wide.w",
            init_dense(spec.n_cross(), k, &mut rng),
        )));
    }
    Ok(Model {
        spec: spec.clone(),
        params,
        layout,
    })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Mutable parameter access; exclusive of every forward pass by construction.
    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn has_multihead(&self) -> bool {
        self.layout.multihead.is_some()
    }

    fn check_inputs(&self, inputs: &[ModelInput]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::Data("empty input batch".into()));
        }
        for x in inputs {
            cross_index(x.user_id, x.campaign_id, self.spec.n_customers, self.spec.n_campaigns)?;
            if !x.known_features.iter().chain(&x.hidden_features).all(|v| v.is_finite()) {
                return Err(Error::Data("non-finite input feature".into()));
            }
        }
        Ok(())
    }

    fn wide_node(&self, g: &mut Graph, inputs: &[ModelInput]) -> Result<Option<NodeId>> {
        let Some(table) = self.layout.wide else {
            return Ok(None);
        };
        let ids = inputs
            .iter()
            .map(|x| cross_index(x.user_id, x.campaign_id, self.spec.n_customers, self.spec.n_campaigns))
            .collect::<Result<Vec<_>>>()?;
        g.embed(&self.params, table, &ids).map(Some)
    }

    /// Runs the deep stack (plus multi-head activation) and returns the node
    /// feeding the dropout layer.
    fn deep_prefix(&self, g: &mut Graph, inputs: &[ModelInput]) -> Result<NodeId> {
        let batch = inputs.len();
        let input = match self.spec.kind {
            ModelKind::WideDeep => DeepInput::KnownFeatures,
            _ => self.spec.deep_input().expect("validated at build"),
        };
        let mut parts = Vec::new();
        if input.uses_known() {
            let data = inputs.iter().flat_map(|x| x.known_features).collect();
            parts.push(g.input(Tensor::new(vec![batch, 4], data)?));
        }
        if input.uses_hidden() {
            let data = inputs.iter().flat_map(|x| x.hidden_features).collect();
            parts.push(g.input(Tensor::new(vec![batch, 2], data)?));
        }
        if input.uses_embeddings() {
            let users: Vec<usize> = inputs.iter().map(|x| x.user_id).collect();
            let camps: Vec<usize> = inputs.iter().map(|x| x.campaign_id).collect();
            parts.push(g.embed(&self.params, self.layout.user_embed.expect("built"), &users)?);
            parts.push(g.embed(&self.params, self.layout.campaign_embed.expect("built"), &camps)?);
        }
        let mut h = if parts.len() == 1 { parts[0] } else { g.concat(&parts)? };
        for &(w, b) in &self.layout.hidden {
            let z = g.dense(&self.params, h, w, Some(b))?;
            h = g.relu(z);
        }
        if let Some((w, b)) = self.layout.multihead {
            let z = g.dense(&self.params, h, w, Some(b))?;
            h = g.relu(z);
        }
        Ok(h)
    }

    /// Builds the forward graph and returns the logit node.
    ///
    /// Dropout (multi-head only) follows `mode`; masks come from `rng` in
    /// row-major order.
    pub fn forward(&self, inputs: &[ModelInput], mode: DropoutMode, rng: &mut Stream) -> Result<(Graph, NodeId)> {
        self.forward_with(inputs, |g, h| {
            g.dropout(h, self.spec.multihead_dropout_p, mode, rng)
        })
    }

    /// Forward pass with explicit dropout multipliers for the multi-head layer.
    pub fn forward_with_mask(&self, inputs: &[ModelInput], mask: Vec<f64>) -> Result<(Graph, NodeId)> {
        if !self.has_multihead() {
            return Err(Error::Capability("model has no multi-head dropout layer".into()));
        }
        self.forward_with(inputs, |g, h| g.dropout_with_mask(h, mask))
    }

    fn forward_with(
        &self,
        inputs: &[ModelInput],
        drop: impl FnOnce(&mut Graph, NodeId) -> Result<NodeId>,
    ) -> Result<(Graph, NodeId)> {
        self.check_inputs(inputs)?;
        let mut g = Graph::new();
        let wide = self.wide_node(&mut g, inputs)?;
        let logits = match self.layout.output {
            Some((w, b)) => {
                let mut h = self.deep_prefix(&mut g, inputs)?;
                if self.has_multihead() {
                    h = drop(&mut g, h)?;
                }
                let deep = g.dense(&self.params, h, w, Some(b))?;
                match wide {
                    Some(wide) => g.add(deep, wide)?,
                    None => deep,
                }
            }
            None => wide.expect("wide model has a wide path"),
        };
        Ok((g, logits))
    }

    /// Mean cross-entropy of `labels` (0-based) and its graph, ready for backward.
    pub fn loss_graph(
        &self,
        inputs: &[ModelInput],
        labels: &[usize],
        mode: DropoutMode,
        rng: &mut Stream,
    ) -> Result<(Graph, NodeId)> {
        let (mut g, logits) = self.forward(inputs, mode, rng)?;
        let loss = g.softmax_xent(logits, labels)?;
        Ok((g, loss))
    }

    /// Deterministic part of the network, cached for repeated stochastic heads.
    pub fn prefix(&self, inputs: &[ModelInput]) -> Result<Prefix> {
        if !self.has_multihead() {
            return Err(Error::Capability("model has no multi-head dropout layer".into()));
        }
        self.check_inputs(inputs)?;
        let mut g = Graph::new();
        let wide = self.wide_node(&mut g, inputs)?;
        let h = self.deep_prefix(&mut g, inputs)?;
        Ok(Prefix {
            head_input: g.value(h).clone(),
            wide_logits: wide.map(|w| g.value(w).clone()),
        })
    }

    pub fn head_width(&self) -> usize {
        self.spec.multihead_width
    }

    /// Softmax output of the dropout-onward layers for one prefix row under
    /// each of `masks` (each `head_width` long). Returns `[masks.len(), n_offers]`.
    pub fn head_proba(&self, prefix: &Prefix, row: usize, masks: &[Vec<f64>]) -> Result<Tensor> {
        let (w, b) = self.layout.output.expect("multi-head models have an output layer");
        let width = self.head_width();
        let src = prefix.head_input.row(row);
        let mut x = Vec::with_capacity(masks.len() * width);
        for m in masks {
            if m.len() != width {
                return Err(Error::Shape {
                    op: "head mask",
                    left: vec![width],
                    right: vec![m.len()],
                });
            }
            x.extend(src.iter().zip(m).map(|(a, b)| a * b));
        }
        let x = Tensor::new(vec![masks.len(), width], x)?;
        let mut logits =
            crate::ndnum::dense_forward(&x, &self.params.get(w).value, Some(&self.params.get(b).value))?;
        if let Some(wide) = &prefix.wide_logits {
            let wrow = wide.row(row);
            let k = self.spec.n_offers;
            for r in logits.data_mut().chunks_exact_mut(k) {
                r.iter_mut().zip(wrow).for_each(|(a, b)| *a += b);
            }
        }
        Ok(softmax(&logits))
    }

    /// Softmax probabilities `[batch, n_offers]`.
    pub fn predict_proba(&self, inputs: &[ModelInput], mode: DropoutMode, rng: &mut Stream) -> Result<Tensor> {
        let (g, logits) = self.forward(inputs, mode, rng)?;
        Ok(softmax(g.value(logits)))
    }

    /// Deterministic probabilities (dropout off).
    pub fn predict_proba_det(&self, inputs: &[ModelInput]) -> Result<Tensor> {
        self.predict_proba(inputs, DropoutMode::Off, &mut Stream::new(0))
    }

    /// Greedy 1-based offers for a batch.
    pub fn predict_offers(&self, inputs: &[ModelInput]) -> Result<Vec<usize>> {
        let probs = self.predict_proba_det(inputs)?;
        let k = self.spec.n_offers;
        Ok(probs.data().chunks_exact(k).map(argmax_offer).collect())
    }

    pub fn predict_offer(&self, input: &ModelInput) -> Result<usize> {
        Ok(self.predict_offers(std::slice::from_ref(input))?[0])
    }

    /// Replaces parameter values by name (checkpoint restore).
    pub fn load_values(&mut self, values: Vec<(String, Tensor)>) -> Result<()> {
        for (name, value) in values {
            let id = self
                .params
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            let p = self.params.get_mut(id);
            if p.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} does not match {:?}",
                    value.shape(),
                    p.shape()
                )));
            }
            p.value = value;
        }
        Ok(())
    }

    /// Copies parameter values from another model with the same spec.
    pub fn copy_values_from(&mut self, other: &Model) {
        for (dst, src) in self.params.iter_mut().zip(other.params.iter()) {
            dst.value = src.value.clone();
        }
    }
}

/// 1-based index of the largest value; ties go to the lowest offer.
pub fn argmax_offer(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best + 1
}
