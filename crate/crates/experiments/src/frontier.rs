use std::fmt;
use std::io::Write;

use dpmerge_core::Accountant;
use serde::Serialize;

use crate::MergeRule;

/// A merging rule paired with an accountant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Method {
    #[serde(rename = "RS-RDP")]
    RsRdp,
    #[serde(rename = "RS-PLD")]
    RsPld,
    #[serde(rename = "LC-RDP")]
    LcRdp,
    #[serde(rename = "LC-PLD")]
    LcPld,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::RsRdp, Method::RsPld, Method::LcRdp, Method::LcPld];

    pub fn new(rule: MergeRule, accountant: Accountant) -> Self {
        match (rule, accountant) {
            (MergeRule::Rs, Accountant::Rdp) => Method::RsRdp,
            (MergeRule::Rs, Accountant::Pld) => Method::RsPld,
            (MergeRule::Lc, Accountant::Rdp) => Method::LcRdp,
            (MergeRule::Lc, Accountant::Pld) => Method::LcPld,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::RsRdp => "RS-RDP",
            Method::RsPld => "RS-PLD",
            Method::LcRdp => "LC-RDP",
            Method::LcPld => "LC-PLD",
        }
    }

    pub fn is_linear_combination(self) -> bool {
        matches!(self, Method::LcRdp | Method::LcPld)
    }

    pub fn uses_pld(self) -> bool {
        matches!(self, Method::RsPld | Method::LcPld)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether larger or smaller utility values are better.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UtilitySense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub method: Method,
    pub weights: Vec<f64>,
    pub eps: f64,
    pub delta: f64,
    pub utility: f64,
    pub utility_stderr: f64,
}

fn better_or_equal(a: f64, b: f64, sense: UtilitySense) -> bool {
    match sense {
        UtilitySense::Maximize => a >= b,
        UtilitySense::Minimize => a <= b,
    }
}

/// Points not dominated under (smaller ε, better utility), sorted by ε with
/// the input order kept among ties. Identical points are all kept.
pub fn pareto_extract(points: &[FrontierPoint], sense: UtilitySense) -> Vec<FrontierPoint> {
    let dominated = |p: &FrontierPoint| {
        points.iter().any(|o| {
            o.eps <= p.eps
                && better_or_equal(o.utility, p.utility, sense)
                && (o.eps < p.eps || o.utility != p.utility)
        })
    };
    let mut kept: Vec<FrontierPoint> = points.iter().filter(|p| !dominated(p)).cloned().collect();
    kept.sort_by(|a, b| a.eps.total_cmp(&b.eps));
    kept
}

/// Columns: `method, w0..w{k-1}, eps, delta, utility, utility_stderr`.
/// Numbers are written in shortest round-trip form.
pub fn write_frontier_csv<W: Write>(points: &[FrontierPoint], out: W) -> std::io::Result<()> {
    let width = points.iter().map(|p| p.weights.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["method".to_string()];
    header.extend((0..width).map(|i| format!("w{i}")));
    header.extend(["eps", "delta", "utility", "utility_stderr"].map(String::from));
    w.write_record(&header)?;
    for p in points {
        let mut row = vec![p.method.name().to_string()];
        row.extend((0..width).map(|i| p.weights.get(i).map_or(String::new(), |x| format!("{x:?}"))));
        row.extend([p.eps, p.delta, p.utility, p.utility_stderr].map(|x| format!("{x:?}")));
        w.write_record(&row)?;
    }
    w.flush()
}
