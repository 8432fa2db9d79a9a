//! Auto-encoder model: a typed layer chain split into encoder and decoder,
//! with seeded initialisation and differentiable forward passes.

mod arch;
mod file;

pub use arch::Architecture;
pub use file::{load_model, save_model, ModelFile, FORMAT_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{anomaly_score, GradientTape, LayerSpec, Tensor, Var};

/// A model that maps a window to its reconstruction and can differentiate
/// its anomaly score with respect to the input.
///
/// [`AeModel`] is the production implementation; tests substitute small
/// analytic models.
pub trait AnomalyModel: Sync {
    /// `(n, l)`: features and window length.
    fn input_shape(&self) -> (usize, usize);

    fn reconstruct(&self, x: &Tensor) -> Result<Tensor>;

    /// Anomaly score of `x` against its reconstruction.
    fn score(&self, x: &Tensor) -> Result<f64> {
        anomaly_score(x, &self.reconstruct(x)?)
    }

    /// Score and its gradient with respect to `x`.
    fn score_with_input_grad(&self, x: &Tensor) -> Result<(f64, Tensor)>;
}

impl AnomalyModel for AeModel {
    fn input_shape(&self) -> (usize, usize) {
        AeModel::input_shape(self)
    }

    fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        AeModel::reconstruct(self, x)
    }

    fn score(&self, x: &Tensor) -> Result<f64> {
        AeModel::score(self, x)
    }

    fn score_with_input_grad(&self, x: &Tensor) -> Result<(f64, Tensor)> {
        AeModel::score_with_input_grad(self, x)
    }
}

/// A layer together with its `(weight, bias)` parameters, if it has any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Option<(Tensor, Tensor)>,
}

/// Parameter gradients, aligned with [`AeModel::layers`].
pub type ParamGrads = Vec<Option<(Tensor, Tensor)>>;

#[derive(Debug, Clone, PartialEq)]
pub struct AeModel {
    name: String,
    features: usize,
    window: usize,
    encoder_len: usize,
    latent: usize,
    layers: Vec<Layer>,
    notes: Vec<String>,
}

impl AeModel {
    /// Build and initialise a model. Weights are drawn uniformly in
    /// `±sqrt(6 / fan_in)` from a ChaCha stream seeded with `seed`; biases
    /// start at zero.
    pub fn build(arch: &Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layers()
            .map(|spec| {
                let params = spec.param_shapes().map(|(ws, bs)| {
                    let bound = (6.0 / spec.fan_in() as f64).sqrt();
                    let count: usize = ws.iter().product();
                    let w: Vec<f64> = (0..count).map(|_| rng.gen_range(-bound..bound)).collect();
                    (Tensor::from_parts(ws, w), Tensor::zeros(&bs))
                });
                Layer { spec: *spec, params }
            })
            .collect();
        Self::from_layers(arch, layers)
    }

    /// Assemble a model from an architecture and explicit parameters.
    pub fn from_layers(arch: &Architecture, layers: Vec<Layer>) -> Result<Self> {
        let shapes = arch.check()?;
        if layers.len() != arch.len() {
            return Err(Error::Config(format!(
                "expected {} layers, got {}",
                arch.len(),
                layers.len()
            )));
        }
        for (i, (layer, spec)) in layers.iter().zip(arch.layers()).enumerate() {
            if layer.spec != *spec {
                return Err(Error::Config(format!("layer {i}: spec differs from architecture")));
            }
            match (spec.param_shapes(), &layer.params) {
                (None, None) => {}
                (Some((ws, bs)), Some((w, b))) => {
                    if w.shape() != ws.as_slice() {
                        return Err(Error::shape("weight", &ws, w.shape()).at_layer(i));
                    }
                    if b.shape() != bs.as_slice() {
                        return Err(Error::shape("bias", &bs, b.shape()).at_layer(i));
                    }
                }
                _ => return Err(Error::Config(format!("layer {i}: parameter presence mismatch"))),
            }
        }
        let latent = shapes[arch.encoder.len()].iter().product();
        Ok(AeModel {
            name: arch.name.clone(),
            features: arch.features,
            window: arch.window,
            encoder_len: arch.encoder.len(),
            latent,
            layers,
            notes: arch.notes.clone(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `(n, l)`: features and window length.
    pub fn input_shape(&self) -> (usize, usize) {
        (self.features, self.window)
    }

    pub fn latent_size(&self) -> usize {
        self.latent
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn architecture(&self) -> Architecture {
        let specs: Vec<LayerSpec> = self.layers.iter().map(|l| l.spec).collect();
        Architecture {
            name: self.name.clone(),
            features: self.features,
            window: self.window,
            encoder: specs[..self.encoder_len].to_vec(),
            decoder: specs[self.encoder_len..].to_vec(),
            notes: self.notes.clone(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params.as_ref())
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != [self.features, self.window] {
            return Err(Error::shape(
                "model input",
                &[self.features, self.window],
                x.shape(),
            ));
        }
        Ok(())
    }

    fn run(&self, layers: &[Layer], offset: usize, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for (i, layer) in layers.iter().enumerate() {
            let p = layer.params.as_ref().map(|(w, b)| (w, b));
            cur = layer.spec.forward(p, &cur).map_err(|e| e.at_layer(offset + i))?;
        }
        Ok(cur)
    }

    /// Latent code `E(x)`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.run(&self.layers[..self.encoder_len], 0, x)
    }

    /// Reconstruction `D(E(x))`, without recording a tape.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        self.run(&self.layers, 0, x)
    }

    /// Anomaly score of `x` against its own reconstruction.
    pub fn score(&self, x: &Tensor) -> Result<f64> {
        anomaly_score(x, &self.reconstruct(x)?)
    }

    /// Record the full forward pass on `tape`. Parameters are borrowed as
    /// leaves and marked as requiring gradient when `param_grads` is set.
    pub fn forward_on_tape<'t>(
        &'t self,
        tape: &mut GradientTape<'t>,
        input: Var,
        param_grads: bool,
    ) -> Result<(Var, Vec<Option<(Var, Var)>>)> {
        self.check_input(tape.value(input)?)?;
        let mut cur = input;
        let mut params = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let p = layer
                .params
                .as_ref()
                .map(|(w, b)| (tape.leaf_ref(w, param_grads), tape.leaf_ref(b, param_grads)));
            cur = tape.forward_layer(&layer.spec, p, cur).map_err(|e| e.at_layer(i))?;
            params.push(p);
        }
        Ok((cur, params))
    }

    /// Huber reconstruction loss of one window and its parameter gradients.
    pub fn huber_with_grads(&self, x: &Tensor, beta: f64) -> Result<(f64, ParamGrads)> {
        let mut tape = GradientTape::new();
        let input = tape.leaf_ref(x, false);
        let (out, params) = self.forward_on_tape(&mut tape, input, true)?;
        let loss = tape.huber(input, out, beta)?;
        let value = tape.value(loss)?.item()?;
        let mut grads = tape.backward(loss)?;
        let pg = params
            .into_iter()
            .map(|p| match p {
                Some((w, b)) => Ok(Some((grads.take(w)?, grads.take(b)?))),
                None => Ok(None),
            })
            .collect::<Result<_>>()?;
        Ok((value, pg))
    }

    /// Anomaly score of `x` and its gradient with respect to `x`. The input
    /// enters both as the target and as the network input.
    pub fn score_with_input_grad(&self, x: &Tensor) -> Result<(f64, Tensor)> {
        let mut tape = GradientTape::new();
        let input = tape.leaf_ref(x, true);
        let (out, _) = self.forward_on_tape(&mut tape, input, false)?;
        let loss = tape.anomaly_score(input, out)?;
        let value = tape.value(loss)?.item()?;
        let mut grads = tape.backward(loss)?;
        Ok((value, grads.take(input)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_window(n: usize, l: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![n, l], (0..n * l).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn skab_reconstructs_8_by_64() {
        let m = AeModel::build(&Architecture::skab(8, 64), 125).unwrap();
        let y = m.reconstruct(&random_window(8, 64, 1)).unwrap();
        assert_eq!(y.shape(), &[8, 64]);
        assert_eq!(m.latent_size(), 8);
        assert!(y.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn industrial_reconstructs_11_by_64() {
        let m = AeModel::build(&Architecture::industrial(11, 64), 42).unwrap();
        let y = m.reconstruct(&random_window(11, 64, 2)).unwrap();
        assert_eq!(y.shape(), &[11, 64]);
        assert_eq!(m.latent_size(), 8);
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let m = AeModel::build(&Architecture::skab(8, 64), 1).unwrap();
        assert!(m.reconstruct(&random_window(8, 32, 0)).is_err());
    }

    #[test]
    fn custom_chain_with_mismatched_dense_fails() {
        let arch = Architecture::custom(
            "bad",
            2,
            8,
            vec![LayerSpec::Flatten, LayerSpec::dense(16, 4)],
            vec![LayerSpec::dense(5, 16), LayerSpec::Reshape { channels: 2, length: 8 }],
        );
        let err = AeModel::build(&arch, 0).unwrap_err();
        assert!(err.to_string().contains("layer 2"), "{err}");
    }

    #[test]
    fn same_seed_same_weights() {
        let a = AeModel::build(&Architecture::skab(8, 64), 7).unwrap();
        let b = AeModel::build(&Architecture::skab(8, 64), 7).unwrap();
        let c = AeModel::build(&Architecture::skab(8, 64), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn tape_forward_matches_plain_forward_bitwise() {
        let m = AeModel::build(&Architecture::skab(8, 64), 3).unwrap();
        let x = random_window(8, 64, 4);
        let mut tape = GradientTape::new();
        let v = tape.leaf_ref(&x, true);
        let (out, _) = m.forward_on_tape(&mut tape, v, false).unwrap();
        assert_eq!(tape.value(out).unwrap(), &m.reconstruct(&x).unwrap());
        let (s, _) = m.score_with_input_grad(&x).unwrap();
        assert_eq!(s.to_bits(), m.score(&x).unwrap().to_bits());
    }
}
