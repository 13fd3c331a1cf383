//! Linear fitting-score model over hashed path features, trained with a
//! dynamic-margin hinge plus two consistency penalties tying the
//! definition-prefixed rendering of a path to its bare rendering.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::euler::{euler_tour_excluding, EulerPath};
use crate::features::{featurize, FeatureVector};
use crate::taxonomy::{NodeId, Taxonomy};
use crate::verbalize::{verbalize, verbalize_with_query};

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RankerError {
    #[error("dimension mismatch: model {model}, input {input}")]
    DimensionMismatch { model: usize, input: usize },
    #[error("dimension {0} is not a positive power of two")]
    InvalidDimension(usize),
    #[error("taxonomy too small: {have} nodes cannot supply {negatives} negatives per positive (need more than {})", .negatives + 1)]
    TaxonomyTooSmall { have: usize, negatives: usize },
    #[error("non-finite loss at epoch {epoch}, sample {sample} (query {query:?})")]
    NonFiniteLoss {
        epoch: usize,
        sample: usize,
        query: String,
    },
    #[error("paths share no node; margins are defined over overlapping lineages")]
    DisjointPaths,
    #[error("invalid chunk size {0}: must be at least 2")]
    InvalidChunkSize(usize),
    #[error("unsupported model file version {0} (expected {MODEL_FILE_VERSION})")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model file parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

/// f(text) = weights · φ(text) + bias, plus the training hyperparameters that
/// produced the weights (kept so a saved model re-runs identically).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerModel {
    pub dimension: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Scales the dissimilarity-proportional hinge margin; must be positive.
    pub margin_scale: f64,
    /// Weight of the positive-path consistency penalty.
    pub lambda_pos: f64,
    /// Weight of the negative-path consistency penalty.
    pub lambda_neg: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl ScorerModel {
    /// Zero-initialized model with the stock hyperparameters.
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(
            dimension > 0 && dimension.is_power_of_two(),
            "model dimension must be a positive power of two"
        );
        ScorerModel {
            dimension,
            weights: vec![0.0; dimension],
            bias: 0.0,
            margin_scale: 0.2,
            lambda_pos: 0.5,
            lambda_neg: 0.5,
            learning_rate: 1e-3,
            epochs: 20,
            seed,
        }
    }

    fn validate(&self) -> Result<(), RankerError> {
        if !self.dimension.is_power_of_two() || self.dimension == 0 {
            return Err(RankerError::InvalidDimension(self.dimension));
        }
        if self.weights.len() != self.dimension {
            return Err(RankerError::DimensionMismatch {
                model: self.dimension,
                input: self.weights.len(),
            });
        }
        Ok(())
    }
}

/// Fitting score of a rendered path.
pub fn score(m: &ScorerModel, text: &str) -> f64 {
    debug_assert_eq!(m.weights.len(), m.dimension);
    featurize(text, m.dimension).dot_dense(&m.weights) + m.bias
}

fn score_features(m: &ScorerModel, v: &FeatureVector) -> f64 {
    v.dot_dense(&m.weights) + m.bias
}

/// γ = (|P∪P'| / |P∩P'| − 1) · margin_scale over the tours' distinct-node sets.
/// Zero iff the sets coincide; grows with dissimilarity.
pub fn dynamic_margin(p: &EulerPath, q: &EulerPath, margin_scale: f64) -> Result<f64, RankerError> {
    let a = p.node_set();
    let b = q.node_set();
    let inter = a.intersection(&b).count();
    if inter == 0 {
        return Err(RankerError::DisjointPaths);
    }
    let union = a.union(&b).count();
    Ok((union as f64 / inter as f64 - 1.0) * margin_scale)
}

/// Σ max(0, −f(P) + f(P') + γ) over aligned (positive, negative, margin) triples.
pub fn margin_loss(m: &ScorerModel, positives: &[&str], negatives: &[&str], margins: &[f64]) -> f64 {
    assert!(
        positives.len() == negatives.len() && negatives.len() == margins.len(),
        "margin_loss inputs must align"
    );
    positives
        .iter()
        .zip(negatives)
        .zip(margins)
        .map(|((p, n), &g)| (-score(m, p) + score(m, n) + g).max(0.0))
        .sum()
}

/// Σ (f(P) − f(P_r))² over (with-definition, bare) positive pairs.
pub fn positive_consistency_loss(m: &ScorerModel, pairs: &[(&str, &str)]) -> f64 {
    pairs
        .iter()
        .map(|(with, bare)| {
            let d = score(m, with) - score(m, bare);
            d * d
        })
        .sum()
}

/// Σ max(0, f(P') − f(P'_r)) over (with-definition, bare) negative pairs.
pub fn negative_consistency_loss(m: &ScorerModel, pairs: &[(&str, &str)]) -> f64 {
    pairs
        .iter()
        .map(|(with, bare)| (score(m, with) - score(m, bare)).max(0.0))
        .sum()
}

/// One anchor's two renderings plus the tour they came from.
#[derive(Debug, Clone)]
pub struct PathSample {
    pub anchor: NodeId,
    /// Definition-prefixed rendering P_v(q, P).
    pub with_query: String,
    /// Bare rendering P_v(P).
    pub bare: String,
    pub path: EulerPath,
}

#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub query: NodeId,
    pub query_name: String,
    /// Anchor is the query's canonical parent.
    pub positive: PathSample,
    /// Anchors drawn from the rest of the taxonomy, never the parent.
    pub negatives: Vec<PathSample>,
}

/// ℒ = ℒ_margin + λ₊·ℒ₊ + λ₋·ℒ₋ for one sample.
pub fn joint_loss(m: &ScorerModel, sample: &TrainingSample) -> f64 {
    joint_loss_and_gradient(m, sample).0
}

/// Loss plus its analytic gradient w.r.t. the weights, as sorted sparse
/// (index, ∂ℒ/∂w) pairs. The bias cancels out of every term (all three losses
/// are functions of score differences), so it is never updated.
pub fn joint_loss_and_gradient(m: &ScorerModel, sample: &TrainingSample) -> (f64, Vec<(u32, f64)>) {
    let feats = SampleFeatures::build(m, sample);
    let (loss, grad) = loss_and_grad(m, &feats);
    let mut entries: Vec<(u32, f64)> = grad.into_iter().collect();
    entries.sort_by_key(|&(i, _)| i);
    (loss, entries)
}

struct SampleFeatures {
    query_name: String,
    pos_with: FeatureVector,
    pos_bare: FeatureVector,
    negs: Vec<(FeatureVector, FeatureVector)>,
    margins: Vec<f64>,
}

impl SampleFeatures {
    fn build(m: &ScorerModel, s: &TrainingSample) -> SampleFeatures {
        SampleFeatures {
            query_name: s.query_name.clone(),
            pos_with: featurize(&s.positive.with_query, m.dimension),
            pos_bare: featurize(&s.positive.bare, m.dimension),
            negs: s
                .negatives
                .iter()
                .map(|n| {
                    (
                        featurize(&n.with_query, m.dimension),
                        featurize(&n.bare, m.dimension),
                    )
                })
                .collect(),
            margins: s
                .negatives
                .iter()
                .map(|n| {
                    dynamic_margin(&s.positive.path, &n.path, m.margin_scale)
                        .expect("tours of one taxonomy share the root")
                })
                .collect(),
        }
    }
}

fn accumulate(grad: &mut HashMap<u32, f64>, v: &FeatureVector, coeff: f64) {
    if coeff == 0.0 {
        return;
    }
    for &(i, w) in v.entries() {
        *grad.entry(i).or_insert(0.0) += coeff * w;
    }
}

fn loss_and_grad(m: &ScorerModel, sf: &SampleFeatures) -> (f64, HashMap<u32, f64>) {
    let mut grad: HashMap<u32, f64> = HashMap::new();
    let f_pos_with = score_features(m, &sf.pos_with);
    let f_pos_bare = score_features(m, &sf.pos_bare);

    let mut loss = 0.0;
    for ((neg_with, neg_bare), &gamma) in sf.negs.iter().zip(&sf.margins) {
        let f_neg_with = score_features(m, neg_with);
        let f_neg_bare = score_features(m, neg_bare);

        let hinge = -f_pos_with + f_neg_with + gamma;
        if hinge > 0.0 {
            loss += hinge;
            accumulate(&mut grad, neg_with, 1.0);
            accumulate(&mut grad, &sf.pos_with, -1.0);
        }

        let slack = f_neg_with - f_neg_bare;
        if slack > 0.0 {
            loss += m.lambda_neg * slack;
            accumulate(&mut grad, neg_with, m.lambda_neg);
            accumulate(&mut grad, neg_bare, -m.lambda_neg);
        }
    }

    let diff = f_pos_with - f_pos_bare;
    loss += m.lambda_pos * diff * diff;
    let coeff = m.lambda_pos * 2.0 * diff;
    accumulate(&mut grad, &sf.pos_with, coeff);
    accumulate(&mut grad, &sf.pos_bare, -coeff);

    (loss, grad)
}

/// One self-supervised sample per non-root node n: the positive anchor is n's
/// canonical parent, negatives are a seeded uniform draw from the rest of the
/// taxonomy (never n or its parent). Every tour is taken with n detached from
/// sibling/children lists, mirroring expansion time when n is not yet attached.
pub fn sample_training_data(
    t: &Taxonomy,
    negatives_per_positive: usize,
    seed: u64,
) -> Result<Vec<TrainingSample>, RankerError> {
    use rand::SeedableRng;

    if t.len() <= negatives_per_positive + 1 {
        return Err(RankerError::TaxonomyTooSmall {
            have: t.len(),
            negatives: negatives_per_positive,
        });
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();

    for n in t.node_ids() {
        let Some(parent) = t.parent(n) else {
            continue; // root has no attachment to learn
        };
        let definition = t.definition(n).unwrap_or("").to_string();
        let render = |anchor: NodeId| -> PathSample {
            let path = euler_tour_excluding(t, anchor, Some(n));
            PathSample {
                anchor,
                with_query: verbalize_with_query(&definition, &path, t).text,
                bare: verbalize(&path, t).text,
                path,
            }
        };

        let eligible: Vec<NodeId> = t.node_ids().filter(|&a| a != n && a != parent).collect();
        let picked = rand::seq::index::sample(&mut rng, eligible.len(), negatives_per_positive);
        let negatives = picked.iter().map(|i| render(eligible[i])).collect();

        samples.push(TrainingSample {
            query: n,
            query_name: t.name(n).to_string(),
            positive: render(parent),
            negatives,
        });
    }
    Ok(samples)
}

#[derive(Debug)]
pub struct TrainReport {
    pub model: ScorerModel,
    /// Summed per-sample losses in visit order, one entry per epoch (each
    /// sample's loss is measured just before its own update).
    pub epoch_losses: Vec<f64>,
}

/// Per-sample gradient descent on the joint loss for `m.epochs` passes.
/// Deterministic: samples are visited in order and nothing here draws
/// randomness.
pub fn train(m: &ScorerModel, samples: &[TrainingSample]) -> Result<TrainReport, RankerError> {
    assert!(!samples.is_empty(), "training needs at least one sample");
    m.validate()?;

    let mut model = m.clone();
    let features: Vec<SampleFeatures> = samples
        .iter()
        .map(|s| SampleFeatures::build(&model, s))
        .collect();

    let mut epoch_losses = Vec::with_capacity(model.epochs);
    for epoch in 0..model.epochs {
        let mut total = 0.0;
        for (si, sf) in features.iter().enumerate() {
            let (loss, grad) = loss_and_grad(&model, sf);
            if !loss.is_finite() {
                return Err(RankerError::NonFiniteLoss {
                    epoch,
                    sample: si,
                    query: sf.query_name.clone(),
                });
            }
            total += loss;
            for (i, g) in grad {
                model.weights[i as usize] -= model.learning_rate * g;
            }
        }
        epoch_losses.push(total);
    }

    if let Some(bad) = model.weights.iter().position(|w| !w.is_finite()) {
        return Err(RankerError::NonFiniteLoss {
            epoch: model.epochs,
            sample: bad,
            query: "<weights diverged>".to_string(),
        });
    }
    Ok(TrainReport { model, epoch_losses })
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    #[serde(flatten)]
    model: ScorerModel,
}

pub fn save_model(m: &ScorerModel, path: &Path) -> Result<(), RankerError> {
    m.validate()?;
    let file = ModelFile {
        version: MODEL_FILE_VERSION,
        model: m.clone(),
    };
    fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ScorerModel, RankerError> {
    let file: ModelFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    if file.version != MODEL_FILE_VERSION {
        return Err(RankerError::UnsupportedVersion(file.version));
    }
    file.model.validate()?;
    Ok(file.model)
}
