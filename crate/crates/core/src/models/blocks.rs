use crate::error::Result;
use crate::models::ModelConfig;
use crate::numerics::{
    affine, affine_backward, recurrent_step, recurrent_step_backward, tanh, tanh_backward,
    ParamStore, Tensor,
};

pub(crate) fn linear(params: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
    affine(
        x,
        params.value(&format!("{prefix}.weight")),
        params.value(&format!("{prefix}.bias")),
    )
}

/// Accumulates the layer's parameter gradients and returns `dx`.
pub(crate) fn linear_backward(
    params: &mut ParamStore,
    prefix: &str,
    x: &Tensor,
    dy: &Tensor,
) -> Result<Tensor> {
    let wname = format!("{prefix}.weight");
    let (dx, dw, db) = affine_backward(x, params.value(&wname), dy)?;
    params.accumulate(&wname, &dw);
    params.accumulate(&format!("{prefix}.bias"), &db);
    Ok(dx)
}

pub(crate) struct EncoderCache {
    /// `activations[0]` is the input; `activations[i + 1]` is layer `i`'s output.
    activations: Vec<Tensor>,
}

impl EncoderCache {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("at least the input")
    }
}

pub(crate) fn encoder_forward(
    params: &ParamStore,
    cfg: &ModelConfig,
    feats: &Tensor,
) -> Result<EncoderCache> {
    let mut activations = vec![feats.clone()];
    for i in 0..cfg.enc_layers {
        let y = tanh(&linear(params, &format!("encoder.layer{i}"), activations.last().unwrap())?);
        activations.push(y);
    }
    Ok(EncoderCache { activations })
}

/// Returns the gradient with respect to the input features.
pub(crate) fn encoder_backward(
    params: &mut ParamStore,
    cfg: &ModelConfig,
    cache: &EncoderCache,
    d_out: &Tensor,
) -> Result<Tensor> {
    let mut d = d_out.clone();
    for i in (0..cfg.enc_layers).rev() {
        let pre = tanh_backward(&cache.activations[i + 1], &d);
        d = linear_backward(params, &format!("encoder.layer{i}"), &cache.activations[i], &pre)?;
    }
    Ok(d)
}

/// Decoder recurrence run over `[SOS, y_1, .., y_U]`, producing `U+1` states.
pub(crate) struct RecurrenceCache {
    tokens: Vec<usize>,
    /// `states[0]` is the zero initial state; `states[u + 1]` is the output for step `u`.
    states: Vec<Vec<f64>>,
}

impl RecurrenceCache {
    /// Output states as a `[U+1, H]` matrix.
    pub fn hidden(&self) -> Tensor {
        let h = self.states[0].len();
        let data: Vec<f64> = self.states[1..].iter().flatten().copied().collect();
        Tensor::new(vec![self.states.len() - 1, h], data).expect("consistent widths")
    }
}

pub(crate) fn recurrence_initial(cfg: &ModelConfig) -> Vec<f64> {
    vec![0.0; cfg.dec_width]
}

pub(crate) fn recurrence_step(
    params: &ParamStore,
    prefix: &str,
    state: &[f64],
    token: usize,
) -> Result<Vec<f64>> {
    let emb = params.value(&format!("{prefix}.embedding")).row(token);
    recurrent_step(
        state,
        emb,
        params.value(&format!("{prefix}.rnn.weight")),
        params.value(&format!("{prefix}.rnn.bias")),
    )
}

pub(crate) fn recurrence_forward(
    params: &ParamStore,
    prefix: &str,
    cfg: &ModelConfig,
    labels: &[usize],
) -> Result<RecurrenceCache> {
    let tokens: Vec<usize> = std::iter::once(cfg.sos_id()).chain(labels.iter().copied()).collect();
    let mut states = vec![recurrence_initial(cfg)];
    for &tok in &tokens {
        let next = recurrence_step(params, prefix, states.last().unwrap(), tok)?;
        states.push(next);
    }
    Ok(RecurrenceCache { tokens, states })
}

/// Backpropagates `d_hidden[U+1, H]` through time into the recurrence parameters.
pub(crate) fn recurrence_backward(
    params: &mut ParamStore,
    prefix: &str,
    cache: &RecurrenceCache,
    d_hidden: &Tensor,
) {
    let wname = format!("{prefix}.rnn.weight");
    let bname = format!("{prefix}.rnn.bias");
    let ename = format!("{prefix}.embedding");
    let w = params.value(&wname).clone();
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(params.value(&bname).shape());
    let mut demb = Tensor::zeros(params.value(&ename).shape());
    let emb = params.value(&ename).clone();
    let h = cache.states[0].len();
    let mut carry = vec![0.0; h];
    for step in (0..cache.tokens.len()).rev() {
        let d_out: Vec<f64> = d_hidden.row(step).iter().zip(&carry).map(|(a, b)| a + b).collect();
        let tok = cache.tokens[step];
        let (d_state, d_input) = recurrent_step_backward(
            &cache.states[step],
            emb.row(tok),
            &w,
            &cache.states[step + 1],
            &d_out,
            &mut dw,
            &mut db,
        );
        for (g, d) in demb.row_mut(tok).iter_mut().zip(&d_input) {
            *g += d;
        }
        carry = d_state;
    }
    params.accumulate(&wname, &dw);
    params.accumulate(&bname, &db);
    params.accumulate(&ename, &demb);
}
