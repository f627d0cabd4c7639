use serde::{Deserialize, Serialize};

use super::{AttentionParams, BiLstm, ConvBlockParams, CrfParams, Linear, Matrix};

/// Every trainable tensor of the tagger. The same type doubles as the
/// gradient accumulator and optimizer moment storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerParams {
    /// `vocab × e`
    pub embedding: Matrix,
    pub conv: ConvBlockParams,
    /// conv output width → `d`
    pub projection: Linear,
    pub attention: Option<AttentionParams>,
    pub recurrent: BiLstm,
    /// `2H → |T|`
    pub emission: Linear,
    pub crf: CrfParams,
}

impl TaggerParams {
    /// Tensors in a fixed order with stable names.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for w in &self.conv.windows {
            out.push((format!("conv.{}.kernels", w.window), &w.kernels));
            out.push((format!("conv.{}.bias", w.window), &w.bias));
        }
        out.push(("projection.weight".into(), &self.projection.weight));
        out.push(("projection.bias".into(), &self.projection.bias));
        if let Some(a) = &self.attention {
            out.push(("attention.query".into(), &a.query));
            out.push(("attention.key".into(), &a.key));
            out.push(("attention.value".into(), &a.value));
            out.push(("attention.output".into(), &a.output));
        }
        for (dir, l) in [
            ("forward", &self.recurrent.forward),
            ("backward", &self.recurrent.backward),
        ] {
            out.push((format!("lstm.{dir}.input"), &l.input_weights));
            out.push((format!("lstm.{dir}.recurrent"), &l.recurrent_weights));
            out.push((format!("lstm.{dir}.bias"), &l.bias));
        }
        out.push(("emission.weight".into(), &self.emission.weight));
        out.push(("emission.bias".into(), &self.emission.bias));
        out.push(("crf.transitions".into(), &self.crf.transitions));
        out
    }

    /// Mutable tensors in the same order as [`TaggerParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.embedding];
        for w in &mut self.conv.windows {
            out.push(&mut w.kernels);
            out.push(&mut w.bias);
        }
        out.push(&mut self.projection.weight);
        out.push(&mut self.projection.bias);
        if let Some(a) = &mut self.attention {
            out.push(&mut a.query);
            out.push(&mut a.key);
            out.push(&mut a.value);
            out.push(&mut a.output);
        }
        for l in [&mut self.recurrent.forward, &mut self.recurrent.backward] {
            out.push(&mut l.input_weights);
            out.push(&mut l.recurrent_weights);
            out.push(&mut l.bias);
        }
        out.push(&mut self.emission.weight);
        out.push(&mut self.emission.bias);
        out.push(&mut self.crf.transitions);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn add_assign(&mut self, other: &TaggerParams) {
        let theirs = other.tensors();
        for (mine, (_, t)) in self.tensors_mut().into_iter().zip(theirs) {
            *mine += t;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}
