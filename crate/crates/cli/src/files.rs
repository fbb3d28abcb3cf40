//! JSON model and design files.
//!
//! Subsystem indices are 1-based on disk. Unbounded budgets are written as
//! the string `"inf"`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;

use ncs_core::model::{validate_network, CandidateScope, Coupling, GainBounds, Link, LinkPattern, PlantNetwork, Subsystem};
use ncs_core::numerics::Matrix;
use ncs_core::sparsify::DesignResult;
use ncs_core::synthesis::{Certificates, GainSet};

pub const SCHEMA_VERSION: u32 = 1;

/// Indented JSON with arrays of scalars kept on one line, so matrix rows
/// read as rows.
pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    fn scalar(v: &Value) -> bool {
        !matches!(v, Value::Array(_) | Value::Object(_))
    }
    fn emit(v: &Value, depth: usize, out: &mut String) {
        let pad = |d: usize| "  ".repeat(d);
        match v {
            Value::Array(items) if items.is_empty() => out.push_str("[]"),
            Value::Array(items) if items.iter().all(scalar) => {
                let parts: Vec<String> = items.iter().map(Value::to_string).collect();
                out.push_str(&format!("[{}]", parts.join(", ")));
            }
            Value::Array(items) => {
                out.push_str("[\n");
                for (k, item) in items.iter().enumerate() {
                    out.push_str(&pad(depth + 1));
                    emit(item, depth + 1, out);
                    out.push_str(if k + 1 < items.len() { ",\n" } else { "\n" });
                }
                out.push_str(&pad(depth));
                out.push(']');
            }
            Value::Object(map) if map.is_empty() => out.push_str("{}"),
            Value::Object(map) => {
                out.push_str("{\n");
                for (k, (key, item)) in map.iter().enumerate() {
                    out.push_str(&format!("{}{}: ", pad(depth + 1), Value::String(key.clone())));
                    emit(item, depth + 1, out);
                    out.push_str(if k + 1 < map.len() { ",\n" } else { "\n" });
                }
                out.push_str(&pad(depth));
                out.push('}');
            }
            _ => out.push_str(&v.to_string()),
        }
    }
    let value = serde_json::to_value(value).expect("file types serialize");
    let mut out = String::new();
    emit(&value, 0, &mut out);
    out.push('\n');
    out
}

/// Row-major nested array.
pub type Rows = Vec<Vec<f64>>;

pub fn to_rows(m: &Matrix) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &Rows, what: &str) -> Result<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != cols) {
        bail!("{what}: row {} has {} entries, expected {cols}", i + 1, r.len());
    }
    Ok(Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Non-negative budget; infinity is spelled `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget(pub f64);

impl Serialize for Budget {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Budget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Budget;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a non-negative number or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Budget, E> {
                if v >= 0.0 {
                    Ok(Budget(v))
                } else {
                    Err(E::custom(format!("budget {v} is negative")))
                }
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Budget, E> {
                self.visit_f64(v as f64)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Budget, E> {
                self.visit_f64(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Budget, E> {
                if v == "inf" {
                    Ok(Budget(f64::INFINITY))
                } else {
                    Err(E::custom(format!("unexpected string {v:?}, only \"inf\" is allowed")))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemEntry {
    pub name: String,
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingEntry {
    pub from: usize,
    pub to: usize,
    #[serde(rename = "H")]
    pub h: Rows,
}

/// Budgets; `iota`/`omega` map `"i,j"` to a bound, `"*"` is the default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsEntry {
    pub kappa: Vec<Budget>,
    pub mu: Vec<Budget>,
    #[serde(default)]
    pub iota: BTreeMap<String, Budget>,
    #[serde(default)]
    pub omega: BTreeMap<String, Budget>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOptions {
    #[serde(default)]
    pub candidate_links: CandidateScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub subsystems: Vec<SubsystemEntry>,
    #[serde(default)]
    pub couplings: Vec<CouplingEntry>,
    pub beta: Vec<f64>,
    /// Unbounded when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsEntry>,
    #[serde(default)]
    pub options: ModelOptions,
}

/// A model file resolved to core types.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub net: PlantNetwork,
    pub bounds: GainBounds,
    pub scope: CandidateScope,
}

pub fn parse_link(key: &str, n: usize) -> Result<Link> {
    let parse = |s: &str| -> Result<usize> {
        let v: usize = s.trim().parse().map_err(|_| anyhow!("link key {key:?} is not of the form \"i,j\""))?;
        if v == 0 || v > n {
            bail!("link key {key:?}: index {v} outside 1..={n}");
        }
        Ok(v - 1)
    };
    let (i, j) = key.split_once(',').ok_or_else(|| anyhow!("link key {key:?} is not of the form \"i,j\""))?;
    let link = Link::new(parse(i)?, parse(j)?);
    if link.i == link.j {
        bail!("link key {key:?} joins a subsystem to itself");
    }
    Ok(link)
}

pub fn link_key(link: Link) -> String {
    format!("{},{}", link.i + 1, link.j + 1)
}

fn link_table(map: &BTreeMap<String, Budget>, n: usize, what: &str) -> Result<(f64, Vec<(Link, f64)>)> {
    let mut default = f64::INFINITY;
    let mut table = Vec::new();
    for (k, v) in map {
        if k == "*" {
            default = v.0;
        } else {
            let link = parse_link(k, n).with_context(|| format!("bounds.{what}"))?;
            if table.iter().any(|(l, _)| *l == link) {
                bail!("bounds.{what}: link {k:?} listed twice");
            }
            table.push((link, v.0));
        }
    }
    table.sort_by_key(|(l, _)| *l);
    Ok((default, table))
}

impl ModelFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.schema_version != SCHEMA_VERSION {
            bail!("field `schema_version`: unsupported version {}, expected {SCHEMA_VERSION}", file.schema_version);
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing model {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        to_pretty_json(self)
    }

    /// Core network and budgets, with dimension checks.
    pub fn resolve(&self) -> Result<Model> {
        let n = self.subsystems.len();
        let subsystems = self
            .subsystems
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let at = |m: &str| format!("subsystems[{i}].{m}");
                Ok(Subsystem::new(s.name.clone(), from_rows(&s.a, &at("A"))?, from_rows(&s.b, &at("B"))?, from_rows(&s.c, &at("C"))?))
            })
            .collect::<Result<Vec<_>>>()?;
        let couplings = self
            .couplings
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if c.from == 0 || c.to == 0 || c.from > n || c.to > n {
                    bail!("couplings[{k}]: endpoints {} -> {} outside 1..={n}", c.from, c.to);
                }
                Ok(Coupling { from: c.from - 1, to: c.to - 1, h: from_rows(&c.h, &format!("couplings[{k}].H"))? })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = PlantNetwork { subsystems, couplings, beta: self.beta.clone() };
        validate_network(&net)?;
        let bounds = match &self.bounds {
            None => GainBounds::unbounded(n),
            Some(b) => {
                let (iota_default, iota) = link_table(&b.iota, n, "iota")?;
                let (omega_default, omega) = link_table(&b.omega, n, "omega")?;
                GainBounds {
                    kappa: b.kappa.iter().map(|v| v.0).collect(),
                    mu: b.mu.iter().map(|v| v.0).collect(),
                    iota_default,
                    omega_default,
                    iota,
                    omega,
                }
            }
        };
        bounds.validate(n)?;
        Ok(Model { net, bounds, scope: self.options.candidate_links })
    }

    pub fn from_model(net: &PlantNetwork, bounds: Option<&GainBounds>, scope: CandidateScope) -> Self {
        let table = |default: f64, entries: &[(Link, f64)]| {
            let mut out = BTreeMap::new();
            out.insert("*".to_string(), Budget(default));
            for (l, v) in entries {
                out.insert(link_key(*l), Budget(*v));
            }
            out
        };
        ModelFile {
            schema_version: SCHEMA_VERSION,
            subsystems: net
                .subsystems
                .iter()
                .map(|s| SubsystemEntry { name: s.name.clone(), a: to_rows(&s.a), b: to_rows(&s.b), c: to_rows(&s.c) })
                .collect(),
            couplings: net
                .couplings
                .iter()
                .map(|c| CouplingEntry { from: c.from + 1, to: c.to + 1, h: to_rows(&c.h) })
                .collect(),
            beta: net.beta.clone(),
            bounds: bounds.map(|b| BoundsEntry {
                kappa: b.kappa.iter().map(|v| Budget(*v)).collect(),
                mu: b.mu.iter().map(|v| Budget(*v)).collect(),
                iota: table(b.iota_default, &b.iota),
                omega: table(b.omega_default, &b.omega),
            }),
            options: ModelOptions { candidate_links: scope },
        }
    }
}

/// Coupling gain for one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkGain {
    /// 1-based `[i, j]`.
    pub link: [usize; 2],
    pub gain: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsEntry {
    #[serde(rename = "K")]
    pub k: Vec<Rows>,
    #[serde(rename = "L")]
    pub l: Vec<LinkGain>,
    #[serde(rename = "M")]
    pub m: Vec<Rows>,
    #[serde(rename = "O")]
    pub o: Vec<LinkGain>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificatesEntry {
    #[serde(rename = "P")]
    pub p: Vec<Rows>,
    #[serde(rename = "P_hat")]
    pub p_hat: Vec<Rows>,
    /// `λ_min` of the two Lyapunov inequalities, then of `P` and `P̂`.
    pub margins: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistorySummary {
    pub method: String,
    pub candidates: Vec<[usize; 2]>,
    pub iterations: usize,
    pub threshold_checks: usize,
    pub tau: Option<f64>,
    pub step2_solves: usize,
    pub eigen_checks: usize,
    pub decentralized_shortcut: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    pub schema_version: u32,
    /// `alpha[i][j] = 1` when subsystem `i` receives from `j` (0-based rows
    /// and columns of an `N × N` indicator matrix).
    pub alpha: Vec<Vec<u8>>,
    pub link_count: usize,
    pub gains: GainsEntry,
    pub certificates: CertificatesEntry,
    /// Spectral abscissae of the state and error dynamics.
    pub abscissae: [f64; 2],
    pub history: HistorySummary,
}

fn one_based(link: Link) -> [usize; 2] {
    [link.i + 1, link.j + 1]
}

impl DesignFile {
    pub fn from_result(r: &DesignResult) -> Self {
        let n = r.pattern.subsystems();
        let link_gains = |table: &BTreeMap<Link, Matrix>| {
            table.iter().map(|(l, g)| LinkGain { link: one_based(*l), gain: to_rows(g) }).collect()
        };
        let h = &r.history;
        DesignFile {
            schema_version: SCHEMA_VERSION,
            alpha: (0..n).map(|i| (0..n).map(|j| r.pattern.alpha(i, j) as u8).collect()).collect(),
            link_count: r.link_count,
            gains: GainsEntry {
                k: r.gains.k.iter().map(to_rows).collect(),
                l: link_gains(&r.gains.l),
                m: r.gains.m.iter().map(to_rows).collect(),
                o: link_gains(&r.gains.o),
            },
            certificates: CertificatesEntry {
                p: r.certificates.p.iter().map(to_rows).collect(),
                p_hat: r.certificates.p_hat.iter().map(to_rows).collect(),
                margins: r.certificates.margins,
            },
            abscissae: [r.abscissae.0, r.abscissae.1],
            history: HistorySummary {
                method: h.method.clone(),
                candidates: h.candidates.iter().map(|l| one_based(*l)).collect(),
                iterations: h.iterations.len(),
                threshold_checks: h.threshold_checks.len(),
                tau: h.tau,
                step2_solves: h.step2_solves,
                eigen_checks: h.eigen_checks,
                decentralized_shortcut: h.decentralized_shortcut,
                notes: h.notes.clone(),
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DesignFile = serde_json::from_str(text)?;
        if file.schema_version != SCHEMA_VERSION {
            bail!("field `schema_version`: unsupported version {}, expected {SCHEMA_VERSION}", file.schema_version);
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing design {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        to_pretty_json(self)
    }

    /// Pattern, gains and certificates checked against the network's
    /// dimensions.
    pub fn resolve(&self, net: &PlantNetwork) -> Result<(LinkPattern, GainSet, Certificates)> {
        let n = net.len();
        if self.alpha.len() != n || self.alpha.iter().any(|r| r.len() != n) {
            bail!("design alpha is not {n}x{n}");
        }
        let mut pattern = LinkPattern::empty(n);
        for (i, row) in self.alpha.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                match (v, i == j) {
                    (0, _) => {}
                    (1, false) => pattern.insert(Link::new(i, j)),
                    _ => bail!("design alpha[{i}][{j}] = {v} is not a valid indicator"),
                }
            }
        }
        let dims = |i: usize| {
            let s = &net.subsystems[i];
            (s.states(), s.inputs(), s.outputs())
        };
        let sized = |rows: &Rows, shape: (usize, usize), what: String| -> Result<Matrix> {
            let m = from_rows(rows, &what)?;
            if m.shape() != shape {
                bail!("{what} is {}x{}, expected {}x{}", m.nrows(), m.ncols(), shape.0, shape.1);
            }
            Ok(m)
        };
        let per_subsystem = |list: &[Rows], what: &str, shape: &dyn Fn(usize) -> (usize, usize)| -> Result<Vec<Matrix>> {
            if list.len() != n {
                bail!("design {what} has {} blocks, model has {n} subsystems", list.len());
            }
            list.iter().enumerate().map(|(i, r)| sized(r, shape(i), format!("{what}{}", i + 1))).collect()
        };
        let per_link = |list: &[LinkGain], what: &str, shape: &dyn Fn(Link) -> (usize, usize)| -> Result<BTreeMap<Link, Matrix>> {
            let mut out = BTreeMap::new();
            for g in list {
                let [i, j] = g.link;
                let link = parse_link(&format!("{i},{j}"), n).with_context(|| format!("design {what}"))?;
                let m = sized(&g.gain, shape(link), format!("{what}{i}{j}"))?;
                if out.insert(link, m).is_some() {
                    bail!("design {what}{i}{j} listed twice");
                }
            }
            Ok(out)
        };
        let gains = GainSet {
            k: per_subsystem(&self.gains.k, "K", &|i| (dims(i).1, dims(i).0))?,
            l: per_link(&self.gains.l, "L", &|l| (dims(l.i).1, dims(l.j).0))?,
            m: per_subsystem(&self.gains.m, "M", &|i| (dims(i).0, dims(i).2))?,
            o: per_link(&self.gains.o, "O", &|l| (dims(l.i).0, dims(l.j).2))?,
            warnings: Vec::new(),
        };
        let square = |i: usize| (dims(i).0, dims(i).0);
        let certificates = Certificates {
            p: per_subsystem(&self.certificates.p, "P", &square)?,
            p_hat: per_subsystem(&self.certificates.p_hat, "P_hat", &square)?,
            margins: self.certificates.margins,
        };
        Ok((pattern, gains, certificates))
    }
}
