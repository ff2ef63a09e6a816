//! A minimal feed-forward network evaluator used by the data-dependent
//! metrics: margins, path norm and the PAC-Bayes perturbation searches.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{read_safetensors, write_safetensors, StoreDtype};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    /// Final layer: raw logits.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeLayer {
    /// `out × in`.
    pub weight: DMatrix<f64>,
    pub bias: Option<DVector<f64>>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeNetwork {
    layers: Vec<ProbeLayer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarLayer {
    weight: String,
    #[serde(default)]
    bias: Option<String>,
    activation: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    layers: Vec<SidecarLayer>,
}

impl ProbeNetwork {
    pub fn new(layers: Vec<ProbeLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("probe network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if let Some(b) = &l.bias {
                if b.len() != l.weight.nrows() {
                    return Err(Error::DimensionMismatch(format!(
                        "layer {i}: bias length {} vs {} outputs",
                        b.len(),
                        l.weight.nrows()
                    )));
                }
            }
            if i + 1 < layers.len() && layers[i + 1].weight.ncols() != l.weight.nrows() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i} has {} outputs but layer {} expects {} inputs",
                    l.weight.nrows(),
                    i + 1,
                    layers[i + 1].weight.ncols()
                )));
            }
            if l.weight.iter().any(|v| !v.is_finite()) || l.bias.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} has non-finite parameters")));
            }
        }
        if layers.last().unwrap().activation == Activation::Relu {
            return Err(Error::InvalidArgument("final layer must produce logits (no relu)".into()));
        }
        Ok(ProbeNetwork { layers })
    }

    pub fn layers(&self) -> &[ProbeLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input of length {} for a network expecting {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut h = DVector::from_column_slice(input);
        for l in &self.layers {
            h = &l.weight * h;
            if let Some(b) = &l.bias {
                h += b;
            }
            if l.activation == Activation::Relu {
                h.apply(|v| *v = v.max(0.0));
            }
        }
        Ok(h.iter().copied().collect())
    }

    /// `‖f_{W²}(1)‖₁`: every weight and bias squared, evaluated on the all-ones input.
    pub fn squared_forward_allones(&self) -> f64 {
        let squared = ProbeNetwork {
            layers: self
                .layers
                .iter()
                .map(|l| ProbeLayer {
                    weight: l.weight.map(|v| v * v),
                    bias: l.bias.as_ref().map(|b| b.map(|v| v * v)),
                    activation: l.activation,
                })
                .collect(),
        };
        let ones = vec![1.0; self.input_dim()];
        squared.forward(&ones).unwrap().iter().map(|v| v.abs()).sum()
    }

    pub fn n_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.as_ref().map_or(0, |b| b.len()))
            .sum()
    }

    /// All weights (row-major) and biases, layer by layer.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_parameters());
        for l in &self.layers {
            for r in 0..l.weight.nrows() {
                out.extend(l.weight.row(r).iter());
            }
            if let Some(b) = &l.bias {
                out.extend(b.iter());
            }
        }
        out
    }

    /// A copy of the network with its parameters replaced, in `parameters()` order.
    pub fn with_parameters(&self, params: &[f64]) -> Result<ProbeNetwork> {
        if params.len() != self.n_parameters() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a network with {}",
                params.len(),
                self.n_parameters()
            )));
        }
        let mut offset = 0;
        let mut take = |n: usize| {
            let s = &params[offset..offset + n];
            offset += n;
            s
        };
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (r, c) = l.weight.shape();
                let weight = DMatrix::from_row_slice(r, c, take(r * c));
                let bias = l.bias.as_ref().map(|b| DVector::from_column_slice(take(b.len())));
                ProbeLayer {
                    weight,
                    bias,
                    activation: l.activation,
                }
            })
            .collect();
        Ok(ProbeNetwork { layers })
    }

    /// Reads a safetensors checkpoint plus its JSON sidecar describing layer
    /// order and activations.
    pub fn load(weights: &Path, sidecar: &Path) -> Result<ProbeNetwork> {
        let text = fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
        let spec: Sidecar = serde_json::from_str(&text)?;
        let bytes = fs::read(weights).map_err(|e| Error::io(weights, e))?;
        let tensors = read_safetensors(weights, &bytes)?;
        let fetch = |name: &str| -> Result<(Vec<usize>, Vec<f64>)> {
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::InvalidArgument(format!("{}: no tensor named {name}", weights.display())))?;
            let t = t.as_ref().map_err(|e| Error::InvalidArgument(format!("{name}: {e}")))?;
            Ok((t.shape.clone(), t.values.clone()))
        };
        let mut layers = Vec::new();
        for l in &spec.layers {
            let (shape, values) = fetch(&l.weight)?;
            if shape.len() != 2 {
                return Err(Error::DimensionMismatch(format!("{}: weight must be 2-D, got {shape:?}", l.weight)));
            }
            let weight = DMatrix::from_row_slice(shape[0], shape[1], &values);
            let bias = match &l.bias {
                Some(name) => Some(DVector::from_vec(fetch(name)?.1)),
                None => None,
            };
            layers.push(ProbeLayer {
                weight,
                bias,
                activation: l.activation,
            });
        }
        ProbeNetwork::new(layers)
    }

    /// Writes `layers.{i}.weight` / `layers.{i}.bias` tensors and the sidecar.
    pub fn save(&self, weights: &Path, sidecar: &Path) -> Result<()> {
        let mut tensors = Vec::new();
        let mut spec = Sidecar { layers: Vec::new() };
        for (i, l) in self.layers.iter().enumerate() {
            let wname = format!("layers.{i}.weight");
            let (r, c) = l.weight.shape();
            let mut values = Vec::with_capacity(r * c);
            for row in 0..r {
                values.extend(l.weight.row(row).iter());
            }
            tensors.push((wname.clone(), vec![r, c], values));
            let bname = l.bias.as_ref().map(|b| {
                let name = format!("layers.{i}.bias");
                tensors.push((name.clone(), vec![b.len()], b.iter().copied().collect()));
                name
            });
            spec.layers.push(SidecarLayer {
                weight: wname,
                bias: bname,
                activation: l.activation,
            });
        }
        write_safetensors(weights, &tensors, StoreDtype::F64, None)?;
        let text = serde_json::to_string_pretty(&spec)?;
        fs::write(sidecar, text).map_err(|e| Error::io(sidecar, e))
    }

    /// Seeded random ReLU MLP with the given layer widths (input first).
    pub fn random(widths: &[usize], seed: u64) -> Result<ProbeNetwork> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument("need at least input and output widths".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let scale = (2.0 / w[0] as f64).sqrt();
                let dist = Normal::new(0.0, scale).unwrap();
                ProbeLayer {
                    weight: DMatrix::from_fn(w[1], w[0], |_, _| dist.sample(&mut rng)),
                    bias: Some(DVector::zeros(w[1])),
                    activation: if i + 2 == widths.len() { Activation::None } else { Activation::Relu },
                }
            })
            .collect();
        ProbeNetwork::new(layers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl ProbeDataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "dataset needs matching, nonempty inputs and labels ({} vs {})",
                inputs.len(),
                labels.len()
            )));
        }
        let dim = inputs[0].len();
        if inputs.iter().any(|x| x.len() != dim) {
            return Err(Error::DimensionMismatch("inputs of unequal length".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside {n_classes} classes")));
        }
        if inputs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset has non-finite features".into()));
        }
        Ok(ProbeDataset {
            inputs,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    /// CSV rows `features..., label`; a non-numeric first row is taken as a header.
    /// `n_classes` defaults to one more than the largest label.
    pub fn load_csv(path: &Path, n_classes: Option<usize>) -> Result<ProbeDataset> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(bytes.as_slice());
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let row = match parsed {
                Ok(r) => r,
                Err(_) if i == 0 => continue,
                Err(e) => {
                    return Err(Error::Unparseable {
                        path: path.to_path_buf(),
                        reason: format!("row {}: {e}", i + 1),
                    })
                }
            };
            let (label, features) = row.split_last().ok_or_else(|| Error::Unparseable {
                path: path.to_path_buf(),
                reason: format!("row {} is empty", i + 1),
            })?;
            if *label < 0.0 || label.fract() != 0.0 {
                return Err(Error::Unparseable {
                    path: path.to_path_buf(),
                    reason: format!("row {}: label {label} is not a class index", i + 1),
                });
            }
            labels.push(*label as usize);
            inputs.push(features.to_vec());
        }
        let n_classes = n_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        ProbeDataset::new(inputs, labels, n_classes)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.input_dim()).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (x, y) in self.inputs.iter().zip(&self.labels) {
            let mut row: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
            row.push(y.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Seeded Gaussian-blob classification: class centers drawn from
    /// `N(0, separation²)`, points from `N(center, 1)`.
    pub fn gaussian_blobs(n_classes: usize, dim: usize, per_class: usize, separation: f64, seed: u64) -> Result<ProbeDataset> {
        if n_classes < 2 || dim == 0 || per_class == 0 {
            return Err(Error::InvalidArgument("blobs need ≥ 2 classes, dim ≥ 1 and ≥ 1 point per class".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f64>> = (0..n_classes)
            .map(|_| (0..dim).map(|_| separation * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect::<Vec<f64>>())
            .collect();
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..per_class {
            for (c, center) in centers.iter().enumerate() {
                inputs.push(center.iter().map(|m| m + Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect::<Vec<f64>>());
                labels.push(c);
            }
        }
        ProbeDataset::new(inputs, labels, n_classes)
    }
}

fn check_compatible(net: &ProbeNetwork, data: &ProbeDataset) -> Result<()> {
    if net.input_dim() != data.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "network expects {} inputs, dataset has {}",
            net.input_dim(),
            data.input_dim()
        )));
    }
    if net.output_dim() < data.n_classes {
        return Err(Error::DimensionMismatch(format!(
            "network has {} outputs for {} classes",
            net.output_dim(),
            data.n_classes
        )));
    }
    Ok(())
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Mean cross-entropy of the softmaxed logits.
pub fn train_loss(net: &ProbeNetwork, data: &ProbeDataset) -> Result<f64> {
    check_compatible(net, data)?;
    let mut total = 0.0;
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        let logits = net.forward(x)?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("non-finite logits".into()));
        }
        total += cross_entropy(&logits, y);
    }
    Ok(total / data.len() as f64)
}

/// `f(x)[y] - max_{i≠y} f(x)_i` for every sample.
pub fn margins(net: &ProbeNetwork, data: &ProbeDataset) -> Result<Vec<f64>> {
    check_compatible(net, data)?;
    data.inputs
        .iter()
        .zip(&data.labels)
        .map(|(x, &y)| {
            let logits = net.forward(x)?;
            let other = logits
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != y)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(logits[y] - other)
        })
        .collect()
}

/// Anything with a parameter vector and a loss at arbitrary parameters.
pub trait LossSurface {
    fn parameters(&self) -> Vec<f64>;
    fn loss_at(&self, params: &[f64]) -> Result<f64>;
}

/// Probe network paired with its training set; loss is mean cross-entropy.
pub struct ProbeObjective<'a> {
    pub network: &'a ProbeNetwork,
    pub data: &'a ProbeDataset,
}

impl LossSurface for ProbeObjective<'_> {
    fn parameters(&self) -> Vec<f64> {
        self.network.parameters()
    }

    fn loss_at(&self, params: &[f64]) -> Result<f64> {
        train_loss(&self.network.with_parameters(params)?, self.data)
    }
}

/// `L(w) = ½ Σ hᵢ wᵢ²` at the point `w`.
pub struct Quadratic {
    pub point: Vec<f64>,
    pub curvature: Vec<f64>,
}

impl LossSurface for Quadratic {
    fn parameters(&self) -> Vec<f64> {
        self.point.clone()
    }

    fn loss_at(&self, params: &[f64]) -> Result<f64> {
        Ok(0.5 * params.iter().zip(&self.curvature).map(|(w, h)| h * w * w).sum::<f64>())
    }
}

/// Per-weight perturbation scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// `u ~ N(0, σ²)`.
    Isotropic,
    /// `u ~ N(0, σ²w² + ε²)`.
    MagnitudeAware { epsilon: f64 },
}

/// Mean loss over `draws` seeded Gaussian perturbations of the parameters.
/// The same seed gives the same standard-normal draws for every σ.
pub fn perturbed_loss_on<S: LossSurface + ?Sized>(
    surface: &S,
    sigma: f64,
    mode: Perturbation,
    seed: u64,
    draws: usize,
) -> Result<f64> {
    let w = surface.parameters();
    if sigma == 0.0 && matches!(mode, Perturbation::Isotropic) {
        return surface.loss_at(&w);
    }
    if draws == 0 {
        return Err(Error::InvalidArgument("perturbed loss needs at least one draw".into()));
    }
    let scales: Vec<f64> = match mode {
        Perturbation::Isotropic => vec![sigma; w.len()],
        Perturbation::MagnitudeAware { epsilon } => {
            w.iter().map(|x| (sigma * sigma * x * x + epsilon * epsilon).sqrt()).collect()
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; w.len()];
    let mut total = 0.0;
    for _ in 0..draws {
        for ((b, x), s) in buf.iter_mut().zip(&w).zip(&scales) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *b = x + s * z;
        }
        let l = surface.loss_at(&buf)?;
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("perturbed loss not finite at σ={sigma}")));
        }
        total += l;
    }
    Ok(total / draws as f64)
}

pub fn perturbed_loss(
    net: &ProbeNetwork,
    data: &ProbeDataset,
    sigma: f64,
    magnitude_aware: bool,
    seed: u64,
    draws: usize,
) -> Result<f64> {
    let mode = if magnitude_aware {
        Perturbation::MagnitudeAware { epsilon: 1e-3 }
    } else {
        Perturbation::Isotropic
    };
    perturbed_loss_on(&ProbeObjective { network: net, data }, sigma, mode, seed, draws)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(w: DMatrix<f64>, act: Activation) -> ProbeLayer {
        ProbeLayer {
            weight: w,
            bias: None,
            activation: act,
        }
    }

    #[test]
    fn identity_network_passes_input_through() {
        let net = ProbeNetwork::new(vec![
            layer(DMatrix::identity(3, 3), Activation::Identity),
            layer(DMatrix::identity(3, 3), Activation::None),
        ])
        .unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn row_of_ones() {
        let net = ProbeNetwork::new(vec![ProbeLayer {
            weight: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            bias: Some(DVector::zeros(1)),
            activation: Activation::None,
        }])
        .unwrap();
        assert_eq!(net.forward(&[1.0, 1.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn relu_clips_before_final_layer() {
        let net = ProbeNetwork::new(vec![
            layer(DMatrix::identity(2, 2), Activation::Relu),
            layer(DMatrix::identity(2, 2), Activation::None),
        ])
        .unwrap();
        assert_eq!(net.forward(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn dimension_checks() {
        assert!(ProbeNetwork::new(vec![
            layer(DMatrix::zeros(3, 2), Activation::Relu),
            layer(DMatrix::zeros(1, 4), Activation::None),
        ])
        .is_err());
        let net = ProbeNetwork::new(vec![layer(DMatrix::zeros(1, 2), Activation::None)]).unwrap();
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let net = ProbeNetwork::new(vec![layer(DMatrix::zeros(4, 2), Activation::None)]).unwrap();
        let data = ProbeDataset::new(vec![vec![1.0, 2.0], vec![-3.0, 0.5]], vec![0, 3], 4).unwrap();
        assert!((train_loss(&net, &data).unwrap() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_logits_give_tiny_loss() {
        let net = ProbeNetwork::new(vec![layer(DMatrix::from_row_slice(2, 1, &[30.0, 0.0]), Activation::None)]).unwrap();
        let data = ProbeDataset::new(vec![vec![1.0]], vec![0], 2).unwrap();
        assert!(train_loss(&net, &data).unwrap() < 1e-12);
    }

    #[test]
    fn two_sample_hand_case() {
        // logits (1, 0) for x = 1 and (-1, 0) for x = -1, labels 0 and 0
        let net = ProbeNetwork::new(vec![layer(DMatrix::from_row_slice(2, 1, &[1.0, 0.0]), Activation::None)]).unwrap();
        let data = ProbeDataset::new(vec![vec![1.0], vec![-1.0]], vec![0, 0], 2).unwrap();
        let e = std::f64::consts::E;
        let expect = 0.5 * ((1.0 + 1.0 / e).ln() + (1.0 + e).ln());
        assert!((train_loss(&net, &data).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn parameter_round_trip() {
        let net = ProbeNetwork::random(&[3, 5, 2], 7).unwrap();
        let p = net.parameters();
        assert_eq!(p.len(), 3 * 5 + 5 + 5 * 2 + 2);
        assert_eq!(net.with_parameters(&p).unwrap(), net);
    }

    #[test]
    fn zero_sigma_is_plain_loss() {
        let net = ProbeNetwork::random(&[2, 4, 3], 1).unwrap();
        let data = ProbeDataset::gaussian_blobs(3, 2, 10, 3.0, 2).unwrap();
        assert_eq!(perturbed_loss(&net, &data, 0.0, false, 5, 10).unwrap(), train_loss(&net, &data).unwrap());
    }

    #[test]
    fn quadratic_perturbation_matches_closed_form() {
        let d = 20;
        let q = Quadratic {
            point: (0..d).map(|i| i as f64 * 0.1).collect(),
            curvature: vec![1.0; d],
        };
        let sigma = 0.3;
        let draws = 4000;
        let got = perturbed_loss_on(&q, sigma, Perturbation::Isotropic, 11, draws).unwrap();
        let expect = q.loss_at(&q.point).unwrap() + sigma * sigma * d as f64 / 2.0;
        assert!((got - expect).abs() < 3.0 / (draws as f64).sqrt(), "{got} vs {expect}");
    }

    #[test]
    fn seeded_perturbations_are_repeatable() {
        let net = ProbeNetwork::random(&[2, 4, 3], 1).unwrap();
        let data = ProbeDataset::gaussian_blobs(3, 2, 10, 3.0, 2).unwrap();
        let a = perturbed_loss(&net, &data, 0.1, true, 9, 10).unwrap();
        let b = perturbed_loss(&net, &data, 0.1, true, 9, 10).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let net = ProbeNetwork::random(&[3, 4, 2], 3).unwrap();
        let (w, s) = (dir.path().join("net.safetensors"), dir.path().join("net.json"));
        net.save(&w, &s).unwrap();
        assert_eq!(ProbeNetwork::load(&w, &s).unwrap(), net);
        let data = ProbeDataset::gaussian_blobs(2, 3, 4, 2.0, 1).unwrap();
        let p = dir.path().join("d.csv");
        data.write_csv(&p).unwrap();
        assert_eq!(ProbeDataset::load_csv(&p, Some(2)).unwrap(), data);
    }
}
