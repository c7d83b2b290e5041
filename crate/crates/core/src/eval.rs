//! Quality metrics against ground truth and held-out data.
//!
//! All entropies and divergences are in nats.

use std::collections::HashSet;
use std::fmt;

use crate::data::{Dataset, DistributionTable, MAX_TABLE_BITS};
use crate::error::{check_dim, Error, Result};
use crate::model::SwitchNetworkModel;

/// Exact joint distribution of a model by enumerating all `2^n`
/// configurations.
pub fn model_distribution(model: &SwitchNetworkModel) -> Result<DistributionTable> {
    let n = model.n();
    if n > MAX_TABLE_BITS {
        return Err(Error::InvalidArgument(format!(
            "cannot enumerate 2^{n} configurations (n <= {MAX_TABLE_BITS})"
        )));
    }
    let prepared = model.prepare()?;
    let mut x = vec![0u8; n];
    let mut probs = Vec::with_capacity(1 << n);
    for index in 0..1usize << n {
        for (k, b) in x.iter_mut().enumerate() {
            *b = ((index >> (n - 1 - k)) & 1) as u8;
        }
        probs.push(prepared.joint_log_prob(&x)?.exp());
    }
    DistributionTable::new(n, probs)
}

fn check_same(p: &DistributionTable, q: &DistributionTable) -> Result<()> {
    check_dim("distribution dimension", p.n(), q.n())
}

/// `½ Σ |p − q|`.
pub fn tv_distance(p: &DistributionTable, q: &DistributionTable) -> Result<f64> {
    check_same(p, q)?;
    Ok(0.5 * p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `KL(p ‖ q)`; infinite if `p` puts mass where `q` has none.
pub fn kl_divergence(p: &DistributionTable, q: &DistributionTable) -> Result<f64> {
    check_same(p, q)?;
    Ok(kl(p.probs(), q.probs()))
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| if *b > 0.0 { a * (a / b).ln() } else { f64::INFINITY })
        .sum()
}

/// Jensen–Shannon divergence `½KL(p‖m) + ½KL(q‖m)`, `m = (p+q)/2`.
pub fn js_divergence(p: &DistributionTable, q: &DistributionTable) -> Result<f64> {
    check_same(p, q)?;
    let m: Vec<f64> = p.probs().iter().zip(q.probs()).map(|(a, b)| 0.5 * (a + b)).collect();
    let js = 0.5 * kl(p.probs(), &m) + 0.5 * kl(q.probs(), &m);
    // rounding can push identical inputs a hair below zero
    Ok(js.clamp(0.0, std::f64::consts::LN_2))
}

/// Square root of [`js_divergence`], which is a metric.
pub fn js_sqrt(p: &DistributionTable, q: &DistributionTable) -> Result<f64> {
    Ok(js_divergence(p, q)?.sqrt())
}

/// Shannon entropy with `0 ln 0 = 0`.
pub fn entropy(table: &DistributionTable) -> f64 {
    table.probs().iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum()
}

/// `−Σ_x table(x) ln p_model(x)`.
pub fn expected_nll(model: &SwitchNetworkModel, table: &DistributionTable) -> Result<f64> {
    check_dim("distribution dimension", model.n(), table.n())?;
    let prepared = model.prepare()?;
    let mut total = 0.0;
    for (index, &p) in table.probs().iter().enumerate() {
        if p > 0.0 {
            total -= p * prepared.joint_log_prob(&table.config(index))?;
        }
    }
    Ok(total)
}

/// Mean `−ln p_model(x)` over the rows of a dataset (nats per vector).
pub fn test_nll(model: &SwitchNetworkModel, dataset: &Dataset) -> Result<f64> {
    check_dim("dataset dimension", model.n(), dataset.n())?;
    let prepared = model.prepare()?;
    let mut total = 0.0;
    for row in dataset.rows() {
        total -= prepared.joint_log_prob(row)?;
    }
    Ok(total / dataset.len() as f64)
}

/// Fraction of generated words found in a lexicon.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DictionaryRatio {
    pub hits: usize,
    pub total: usize,
}

impl DictionaryRatio {
    pub fn value(&self) -> f64 {
        self.hits as f64 / self.total as f64
    }
}

impl fmt::Display for DictionaryRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.hits, self.total)
    }
}

/// Empty words never count as dictionary words.
pub fn dictionary_ratio<S: AsRef<str>>(generated: &[S], lexicon: &HashSet<String>) -> Result<DictionaryRatio> {
    if generated.is_empty() {
        return Err(Error::InvalidArgument("no generated words to score".into()));
    }
    let hits = generated
        .iter()
        .map(AsRef::as_ref)
        .filter(|w| !w.is_empty() && lexicon.contains(*w))
        .count();
    Ok(DictionaryRatio {
        hits,
        total: generated.len(),
    })
}

/// One metric value with the convention it was computed under.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub metric: String,
    pub value: f64,
    pub convention: String,
    pub metadata: Vec<(String, String)>,
}

impl EvalReport {
    pub fn new(model: &str, metric: &str, value: f64, convention: &str) -> Self {
        Self {
            model: model.to_string(),
            metric: metric.to_string(),
            value,
            convention: convention.to_string(),
            metadata: Vec::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    /// Tab-separated `key=value` record.
    pub fn to_line(&self) -> String {
        let mut fields = vec![
            format!("metric={}", self.metric),
            format!("value={}", self.value),
            format!("convention={}", self.convention),
            format!("model={}", self.model),
        ];
        fields.extend(self.metadata.iter().map(|(k, v)| format!("{k}={v}")));
        fields.join("\t")
    }
}

/// Ground-truth comparison of one trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct TableMetrics {
    pub nll: f64,
    pub entropy: f64,
    pub tv: f64,
    pub js_divergence: f64,
    pub js_sqrt: f64,
}

pub fn table_metrics(model: &SwitchNetworkModel, truth: &DistributionTable) -> Result<TableMetrics> {
    let learned = model_distribution(model)?;
    let js = js_divergence(truth, &learned)?;
    Ok(TableMetrics {
        nll: expected_nll(model, truth)?,
        entropy: entropy(truth),
        tv: tv_distance(truth, &learned)?,
        js_divergence: js,
        js_sqrt: js.sqrt(),
    })
}

impl TableMetrics {
    pub fn reports(&self, model: &str) -> Vec<EvalReport> {
        vec![
            EvalReport::new(model, "expected_nll", self.nll, "nats"),
            EvalReport::new(model, "entropy", self.entropy, "nats"),
            EvalReport::new(model, "tv", self.tv, "half-l1"),
            EvalReport::new(model, "js", self.js_divergence, "divergence-nats"),
            EvalReport::new(model, "js", self.js_sqrt, "sqrt-divergence-nats"),
        ]
    }
}

/// Plain-text table with columns model, epochs, NLL, TV, JS (both forms).
pub fn summary_table(rows: &[(String, usize, TableMetrics)]) -> String {
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(5).max(5);
    let mut out = format!(
        "{:<width$}  {:>6}  {:>10}  {:>10}  {:>10}  {:>10}\n",
        "model", "epochs", "nll", "tv", "js_div", "js_sqrt"
    );
    for (name, epochs, m) in rows {
        out.push_str(&format!(
            "{name:<width$}  {epochs:>6}  {:>10.6}  {:>10.6}  {:>10.6}  {:>10.6}\n",
            m.nll, m.tv, m.js_divergence, m.js_sqrt
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use crate::model::{Architecture, ConditionalKind};

    fn point(n: usize, at: usize) -> DistributionTable {
        let mut p = vec![0.0; 1 << n];
        p[at] = 1.0;
        DistributionTable::new(n, p).unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let model = SwitchNetworkModel::zeros(4, Architecture::Two { m1: 2, l: 2, m2: 2 }).unwrap();
        let d = model_distribution(&model).unwrap();
        assert!(d.probs().iter().all(|&p| (p - 1.0 / 16.0).abs() < 1e-15));
    }

    #[test]
    fn hand_chain_rule_product() {
        // p(x1 = 1) = 0.75, x2 copies x1 through a saturated weight
        let mut model = SwitchNetworkModel::zeros(2, Architecture::Single { m: 1 }).unwrap();
        if let ConditionalKind::SingleLayer(b) = model.conditional(0).kind().clone() {
            let mut b = b;
            *b.aux_bias_mut(0) = 3f64.ln();
            *model.conditional_mut(0) = crate::ConditionalModel::new(0, ConditionalKind::SingleLayer(b)).unwrap();
        }
        {
            let mut b = crate::SwitchBlock::zeros(1, 1).unwrap();
            b.aux_weights_mut(0)[0] = 80.0;
            *b.aux_bias_mut(0) = -40.0;
            *model.conditional_mut(1) = crate::ConditionalModel::new(1, ConditionalKind::SingleLayer(b)).unwrap();
        }
        let d = model_distribution(&model).unwrap();
        let s = 1.0 / (1.0 + 40f64.exp());
        let expected = [0.25 * (1.0 - s), 0.25 * s, 0.75 * s, 0.75 * (1.0 - s)];
        for (got, want) in d.probs().iter().zip(expected) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn distances_on_extremes() {
        let p = gen_synthetic(4, 1).unwrap();
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        assert!(js_divergence(&p, &p).unwrap().abs() < 1e-15);
        let a = point(3, 1);
        let b = point(3, 6);
        assert_eq!(tv_distance(&a, &b).unwrap(), 1.0);
        assert!((js_divergence(&a, &b).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(tv_distance(&a, &point(2, 1)).is_err());
    }

    #[test]
    fn entropy_reference_values() {
        assert_eq!(entropy(&point(3, 2)), 0.0);
        let uniform = DistributionTable::new(10, vec![1.0 / 1024.0; 1024]).unwrap();
        assert!((entropy(&uniform) - 1024f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn expected_nll_gibbs() {
        let model = SwitchNetworkModel::init(5, Architecture::Single { m: 2 }, 3).unwrap();
        let own = model_distribution(&model).unwrap();
        assert!((expected_nll(&model, &own).unwrap() - entropy(&own)).abs() < 1e-12);
        let truth = gen_synthetic(5, 4).unwrap();
        let nll = expected_nll(&model, &truth).unwrap();
        let gap = nll - entropy(&truth);
        let kl = kl_divergence(&truth, &own).unwrap();
        assert!(gap >= -1e-9);
        assert!((gap - kl).abs() < 1e-9);
    }

    #[test]
    fn single_zero_row_nll() {
        let model = SwitchNetworkModel::zeros(6, Architecture::Single { m: 3 }).unwrap();
        let data = Dataset::new(6, vec![vec![0; 6]], crate::data::Provenance::Unknown).unwrap();
        assert!((test_nll(&model, &data).unwrap() - 6.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dictionary_ratio_rules() {
        let lexicon: HashSet<String> = ["the", "of", "and"].iter().map(|s| s.to_string()).collect();
        assert_eq!(dictionary_ratio(&["the", "of"], &lexicon).unwrap().value(), 1.0);
        let r = dictionary_ratio(&["the", "", "xq"], &lexicon).unwrap();
        assert_eq!((r.hits, r.total), (1, 3));
        assert_eq!(r.to_string(), "1/3");
        let empty: [&str; 0] = [];
        assert!(dictionary_ratio(&empty, &lexicon).is_err());
    }

    #[test]
    fn report_line_format() {
        let r = EvalReport::new("two(2,8,32)", "tv", 0.25, "half-l1").with("n", 10);
        assert_eq!(
            r.to_line(),
            "metric=tv\tvalue=0.25\tconvention=half-l1\tmodel=two(2,8,32)\tn=10"
        );
    }
}
