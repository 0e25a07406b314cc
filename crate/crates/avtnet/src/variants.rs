//! The model zoo: the proposed network, its ablations, the joint-embedding
//! and end-to-end baselines, and the bimodal variants, each expressed as a
//! declarative [`VariantConfig`] plus a builder that instantiates the model
//! with structural checks.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::losses::triplet_hard_loss_grad;
use crate::model::{
    AudioBranch, AvtNet, AvtNetConfig, AvtNetStructure, BatchInputs, ImageBranch, JointKind,
    Recognizer,
};
use crate::nn::{Module, Param};
use crate::{AvtError, Result};

/// Every recognized variant name, in report order.
pub const VARIANT_NAMES: [&str; 11] = [
    "AT",
    "AV",
    "Dense-Triplet",
    "E2E",
    "JER-1",
    "JER-2",
    "Prop",
    "Prop-I",
    "Prop-II",
    "Prop-III",
    "VT",
];

/// Loss applied to each individual modality embedding during phase 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndividualLoss {
    /// The missing-modality triplet loss with mask-matrix mining.
    MissingModality,
    /// Plain hard triplet loss restricted to valid samples.
    TripletHard,
}

/// Loss applied to the joint embedding during phase 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JointLoss {
    TripletHard,
    /// Prototypical-style loss (class centroids, softmax over negative
    /// distances) combined with the triplet hinge. This is a best-effort
    /// reading; report rows carry an "(interpreted)" tag.
    TripletPrototypical,
}

/// Declarative description of one model variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub name: String,
    pub structure: AvtNetStructure,
    /// `None` when the variant has no individual embedding heads.
    pub individual_loss: Option<IndividualLoss>,
    /// `None` only for the end-to-end baseline.
    pub joint_loss: Option<JointLoss>,
    /// End-to-end: feature branches feed a classifier directly, trained with
    /// cross-entropy only and no embedding phase.
    pub end_to_end: bool,
}

impl VariantConfig {
    /// Look up a variant by its canonical name; unknown names list the valid
    /// set in the error.
    pub fn by_name(name: &str) -> Result<Self> {
        let full = AvtNetStructure::default();
        let cfg = |structure: AvtNetStructure,
                   individual_loss: Option<IndividualLoss>,
                   joint_loss: Option<JointLoss>,
                   end_to_end: bool| VariantConfig {
            name: name.to_string(),
            structure,
            individual_loss,
            joint_loss,
            end_to_end,
        };
        let prop_like = |modalities: [bool; 3]| {
            cfg(
                AvtNetStructure {
                    modalities,
                    ..full.clone()
                },
                Some(IndividualLoss::MissingModality),
                Some(JointLoss::TripletHard),
                false,
            )
        };
        let jer = |joint_loss| {
            cfg(
                AvtNetStructure {
                    individual_embeddings: false,
                    joint: JointKind::Dense,
                    ..full.clone()
                },
                None,
                Some(joint_loss),
                false,
            )
        };
        Ok(match name {
            "Prop" => prop_like([true, true, true]),
            "AV" => prop_like([true, true, false]),
            "AT" => prop_like([true, false, true]),
            "VT" => prop_like([false, true, true]),
            "Prop-I" => cfg(
                AvtNetStructure {
                    joint: JointKind::Dense,
                    ..full.clone()
                },
                Some(IndividualLoss::MissingModality),
                Some(JointLoss::TripletHard),
                false,
            ),
            "Prop-II" => cfg(
                full.clone(),
                Some(IndividualLoss::TripletHard),
                Some(JointLoss::TripletHard),
                false,
            ),
            "Prop-III" => cfg(
                AvtNetStructure {
                    individual_embeddings: false,
                    ..full.clone()
                },
                None,
                Some(JointLoss::TripletHard),
                false,
            ),
            "Dense-Triplet" => cfg(
                AvtNetStructure {
                    joint: JointKind::Dense,
                    ..full.clone()
                },
                Some(IndividualLoss::TripletHard),
                Some(JointLoss::TripletHard),
                false,
            ),
            "JER-1" => jer(JointLoss::TripletHard),
            "JER-2" => jer(JointLoss::TripletPrototypical),
            "E2E" => cfg(full, None, None, true),
            _ => {
                return Err(AvtError::UnknownVariant(
                    name.to_string(),
                    VARIANT_NAMES.join(", "),
                ))
            }
        })
    }

    /// Row label for reports; flags the interpreted baseline.
    pub fn display_name(&self) -> String {
        if self.name == "JER-2" {
            "JER-2 (interpreted)".to_string()
        } else {
            self.name.clone()
        }
    }

    /// True when one modality is disabled everywhere.
    pub fn is_bimodal(&self) -> bool {
        self.structure.modalities.iter().filter(|&&m| m).count() == 2
    }
}

/// The end-to-end baseline: the three feature branches feed a
/// dense(512)+BN+ReLU, dense(256)+BN+ReLU, dense(n_classes) classifier,
/// trained with cross-entropy only.
pub struct E2eNet {
    pub config: AvtNetConfig,
    audio: AudioBranch,
    visible: ImageBranch,
    thermal: ImageBranch,
    pub head: Recognizer,
    cache_widths: Option<usize>,
}

impl E2eNet {
    pub fn new(config: AvtNetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let audio = AudioBranch::new(&mut rng, &config);
        let visible = ImageBranch::new(&mut rng, &config, 3);
        let thermal = ImageBranch::new(&mut rng, &config, 1);
        let d_in = 3 * config.feature_dim;
        let head = Recognizer::new(seed ^ 0x5eed, d_in, config.recognizer_dense, config.n_classes);
        Self {
            config,
            audio,
            visible,
            thermal,
            head,
            cache_widths: None,
        }
    }

    pub fn set_training(&mut self, training: bool) {
        self.head.set_training(training);
    }

    pub fn forward(&mut self, inputs: &BatchInputs) -> Result<Array2<f64>> {
        let fa = self.audio.forward(&inputs.audio);
        let fv = self.visible.forward(&inputs.visible);
        let ft = self.thermal.forward(&inputs.thermal);
        let d = fa.ncols();
        self.cache_widths = Some(d);
        let k = fa.nrows();
        let mut concat = Array2::zeros((k, 3 * d));
        concat.slice_mut(ndarray::s![.., ..d]).assign(&fa);
        concat.slice_mut(ndarray::s![.., d..2 * d]).assign(&fv);
        concat.slice_mut(ndarray::s![.., 2 * d..]).assign(&ft);
        self.head.forward(&concat)
    }

    pub fn backward(&mut self, dlogits: &Array2<f64>) {
        let d = self.cache_widths.take().expect("forward before backward");
        let dconcat = self.head.backward(dlogits);
        self.audio
            .backward(&dconcat.slice(ndarray::s![.., ..d]).to_owned());
        self.visible
            .backward(&dconcat.slice(ndarray::s![.., d..2 * d]).to_owned());
        self.thermal
            .backward(&dconcat.slice(ndarray::s![.., 2 * d..]).to_owned());
    }
}

impl Module for E2eNet {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.audio.visit_params(&format!("{prefix}audio."), f);
        self.visible.visit_params(&format!("{prefix}visible."), f);
        self.thermal.visit_params(&format!("{prefix}thermal."), f);
        self.head.visit_params(&format!("{prefix}head."), f);
    }
}

/// A built variant: either an embedding network plus a matching recognizer,
/// or the end-to-end classifier.
pub enum BuiltVariant {
    Embedding { net: AvtNet, recognizer: Recognizer },
    EndToEnd(E2eNet),
}

/// Instantiate the model(s) for `config`, asserting the structural contract
/// that the recognizer input width equals `embed_dim * n_embeddings`.
pub fn build_variant(variant: &VariantConfig, arch: &AvtNetConfig, seed: u64) -> BuiltVariant {
    if variant.end_to_end {
        let net = E2eNet::new(arch.clone(), seed);
        assert_eq!(net.head.d_in, 3 * arch.feature_dim);
        return BuiltVariant::EndToEnd(net);
    }
    let net = AvtNet::new(arch.clone(), variant.structure.clone(), seed);
    let d_in = arch.embed_dim * net.n_embeddings();
    let recognizer = Recognizer::new(seed ^ 0x5eed, d_in, arch.recognizer_dense, arch.n_classes);
    assert_eq!(recognizer.d_in, arch.embed_dim * net.n_embeddings());
    BuiltVariant::Embedding { net, recognizer }
}

/// Prototypical-style loss over a batch: class centroids act as prototypes,
/// each sample is scored by a softmax over negative Euclidean distances to
/// every prototype, and the usual hard triplet hinge is added on top.
pub fn triplet_prototypical_loss(x: &Array2<f64>, y: &[u32], margin: f64) -> f64 {
    triplet_prototypical_loss_grad(x, y, margin).0
}

/// Loss and gradient with respect to `x`; the gradient flows through both the
/// sample term and the centroid construction.
pub fn triplet_prototypical_loss_grad(
    x: &Array2<f64>,
    y: &[u32],
    margin: f64,
) -> (f64, Array2<f64>) {
    let k = x.nrows();
    assert_eq!(k, y.len());
    let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &label) in y.iter().enumerate() {
        members.entry(label).or_default().push(i);
    }
    let classes: Vec<u32> = members.keys().copied().collect();
    let centroids: Vec<ndarray::Array1<f64>> = classes
        .iter()
        .map(|c| {
            let idx = &members[c];
            let mut acc = ndarray::Array1::zeros(x.ncols());
            for &i in idx {
                acc += &x.row(i);
            }
            acc / idx.len() as f64
        })
        .collect();

    // d[i][c], u[i][c] = (x_i - c_c) / d (zero at d ~ 0)
    let mut grad = Array2::<f64>::zeros(x.raw_dim());
    let mut proto_loss = 0.0;
    for i in 0..k {
        let dists: Vec<f64> = centroids
            .iter()
            .map(|c| {
                let diff = &x.row(i) - c;
                diff.dot(&diff).sqrt()
            })
            .collect();
        // softmax over negative distances, stabilized by the minimum distance
        let m = dists.iter().cloned().fold(f64::INFINITY, f64::min);
        let exps: Vec<f64> = dists.iter().map(|&d| (-(d - m)).exp()).collect();
        let z: f64 = exps.iter().sum();
        let target = classes.iter().position(|&c| c == y[i]).unwrap();
        proto_loss += -(exps[target] / z).ln();
        for (ci, c) in centroids.iter().enumerate() {
            let p = exps[ci] / z;
            // dL_i / dd[i][ci]: the scores are negative distances, so the
            // own-class distance is pushed down and the others up
            let w = (if ci == target { 1.0 - p } else { -p }) / k as f64;
            if dists[ci] < 1e-12 {
                continue;
            }
            let u = (&x.row(i) - c) / dists[ci];
            let mut gi = grad.row_mut(i);
            gi += &(&u * w);
            let idx = &members[&classes[ci]];
            let share = w / idx.len() as f64;
            for &j in idx {
                let mut gj = grad.row_mut(j);
                gj -= &(&u * share);
            }
        }
    }
    let proto_loss = proto_loss / k as f64;

    let (hinge, hinge_grad) = triplet_hard_loss_grad(x, y, margin);
    (proto_loss + hinge, grad + hinge_grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn all_names_build() {
        for name in VARIANT_NAMES {
            let v = VariantConfig::by_name(name).unwrap();
            assert_eq!(v.name, name);
            let arch = AvtNetConfig::toy(8);
            match build_variant(&v, &arch, 7) {
                BuiltVariant::Embedding { net, recognizer } => {
                    assert_eq!(recognizer.d_in, 256 * net.n_embeddings());
                }
                BuiltVariant::EndToEnd(_) => assert_eq!(name, "E2E"),
            }
        }
    }

    #[test]
    fn unknown_name_lists_valid_variants() {
        let err = VariantConfig::by_name("nosuch").unwrap_err();
        let msg = err.to_string();
        for name in VARIANT_NAMES {
            assert!(msg.contains(name), "{msg} missing {name}");
        }
    }

    #[test]
    fn structural_examples() {
        let arch = AvtNetConfig::toy(8);
        let prop = VariantConfig::by_name("Prop").unwrap();
        match build_variant(&prop, &arch, 1) {
            BuiltVariant::Embedding { net, .. } => {
                assert_eq!(net.n_embeddings(), 4);
                assert_eq!(net.structure.joint, JointKind::Transformer);
            }
            _ => panic!("Prop is an embedding variant"),
        }
        let p3 = VariantConfig::by_name("Prop-III").unwrap();
        match build_variant(&p3, &arch, 1) {
            BuiltVariant::Embedding { recognizer, .. } => assert_eq!(recognizer.d_in, 256),
            _ => panic!(),
        }
        let vt = VariantConfig::by_name("VT").unwrap();
        assert!(!vt.structure.modalities[0]);
        assert!(vt.is_bimodal());
        match build_variant(&vt, &arch, 1) {
            BuiltVariant::Embedding { recognizer, .. } => assert_eq!(recognizer.d_in, 768),
            _ => panic!(),
        }
    }

    #[test]
    fn prototypical_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let k = 8;
        let d = 5;
        let x = Array2::from_shape_fn((k, d), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<u32> = (0..k as u32).map(|i| i % 3).collect();
        let (_, g) = triplet_prototypical_loss_grad(&x, &y, 0.2);
        let h = 1e-5;
        for i in 0..k {
            for j in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[[i, j]] += h;
                xm[[i, j]] -= h;
                let fp = triplet_prototypical_loss(&xp, &y, 0.2);
                let fm = triplet_prototypical_loss(&xm, &y, 0.2);
                let fd = (fp - fm) / (2.0 * h);
                let denom = fd.abs().max(g[[i, j]].abs()).max(1e-6);
                assert!(
                    (fd - g[[i, j]]).abs() / denom < 1e-4,
                    "({i},{j}): analytic {} vs fd {fd}",
                    g[[i, j]]
                );
            }
        }
    }

    #[test]
    fn prototypical_loss_favors_tight_clusters() {
        let mut tight = Array2::zeros((6, 4));
        for i in 0..6 {
            tight[[i, i % 2]] = 1.0;
            tight[[i, 3]] = 0.01 * i as f64;
        }
        let y = vec![0, 1, 0, 1, 0, 1];
        let loose = Array2::from_shape_fn((6, 4), |(i, j)| ((i * 7 + j * 3) % 5) as f64 / 2.0);
        assert!(
            triplet_prototypical_loss(&tight, &y, 0.2)
                < triplet_prototypical_loss(&loose, &y, 0.2)
        );
    }
}
