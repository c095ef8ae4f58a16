//! Datasets, finite-support distributions and per-side affine regression.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, Mat2, Mat4, Vec2};
use crate::model::Samples;

/// Sign of an input, selecting one of the two outer affine pieces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Pos,
    Neg,
}

impl Sign {
    pub const BOTH: [Sign; 2] = [Sign::Pos, Sign::Neg];

    #[inline]
    pub fn of(x: f64) -> Option<Sign> {
        if x > 0.0 {
            Some(Sign::Pos)
        } else if x < 0.0 {
            Some(Sign::Neg)
        } else {
            None
        }
    }

    /// 0 for the positive side, 1 for the negative side.
    #[inline]
    pub fn index(self) -> usize {
        match self {
            Sign::Pos => 0,
            Sign::Neg => 1,
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        match self {
            Sign::Pos => 1.0,
            Sign::Neg => -1.0,
        }
    }

    #[inline]
    pub fn flip(self) -> Sign {
        match self {
            Sign::Pos => Sign::Neg,
            Sign::Neg => Sign::Pos,
        }
    }
}

/// Ordered list of scalar samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    points: Vec<(f64, f64)>,
}

impl Dataset {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Domain("dataset contains a non-finite value".into()));
        }
        Ok(Dataset { points })
    }

    /// Like [`Dataset::new`] but rejects inputs at exactly zero, which
    /// belong to neither side.
    pub fn for_training(points: Vec<(f64, f64)>) -> Result<Self> {
        let d = Dataset::new(points)?;
        if d.points.iter().any(|p| p.0 == 0.0) {
            return Err(Error::Domain("training inputs must be nonzero".into()));
        }
        Ok(d)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points with `sign(x) = σ`, in original order.
    pub fn side(&self, sign: Sign) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .copied()
            .filter(|p| Sign::of(p.0) == Some(sign))
            .collect()
    }

    /// Smallest |x_j|; infinite for an empty dataset.
    pub fn x_underbar(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.0.abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Merges exactly repeated points, keeping first-occurrence order.
    pub fn grouped(&self) -> Grouped {
        let mut index: HashMap<(u64, u64), usize> = HashMap::new();
        let mut g = Grouped {
            x: Vec::new(),
            y: Vec::new(),
            count: Vec::new(),
            total: self.len(),
        };
        for &(x, y) in &self.points {
            let key = (x.to_bits(), y.to_bits());
            match index.get(&key) {
                Some(&k) => g.count[k] += 1.0,
                None => {
                    index.insert(key, g.x.len());
                    g.x.push(x);
                    g.y.push(y);
                    g.count.push(1.0);
                }
            }
        }
        g
    }

    pub fn push(&mut self, x: f64, y: f64) {
        self.points.push((x, y));
    }

    pub fn slice(&self, idx: &[usize]) -> Dataset {
        Dataset {
            points: idx.iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        wtr.write_record(["x", "y"])?;
        for (x, y) in &self.points {
            wtr.write_record([x.to_string(), y.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "y" {
            return Err(Error::Config("dataset CSV must have header x,y".into()));
        }
        let mut points = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let x = parse_field(&rec[0])?;
            let y = parse_field(&rec[1])?;
            points.push((x, y));
        }
        Dataset::new(points)
    }
}

fn parse_field(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::Config(format!("bad number {s:?}: {e}")))
}

impl Samples for Dataset {
    fn total(&self) -> usize {
        self.points.len()
    }

    fn groups(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.points.iter().map(|&(x, y)| (x, y, 1.0))
    }
}

/// A dataset with repeated points merged into multiplicities. Loss and
/// gradient are the same functions as on the expanded dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Grouped {
    x: Vec<f64>,
    y: Vec<f64>,
    count: Vec<f64>,
    total: usize,
}

impl Grouped {
    pub fn distinct(&self) -> usize {
        self.x.len()
    }
}

impl Samples for Grouped {
    fn total(&self) -> usize {
        self.total
    }

    fn groups(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.x.len()).map(move |j| (self.x[j], self.y[j], self.count[j]))
    }
}

/// The six-point dataset used throughout the examples and experiments.
pub fn example_dataset() -> Dataset {
    Dataset {
        points: vec![
            (-3.0, -1.0),
            (-2.0, 2.0),
            (-1.0, -1.0),
            (1.0, 1.0),
            (2.0, -2.0),
            (3.0, 1.0),
        ],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: f64,
    pub y: f64,
    pub prob: f64,
}

/// Distribution with finitely many atoms; `shift` is added to every y.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteDistribution {
    pub atoms: Vec<Atom>,
    pub shift: f64,
}

impl FiniteDistribution {
    pub fn new(atoms: Vec<Atom>, shift: f64) -> Result<Self> {
        let d = FiniteDistribution { atoms, shift };
        d.validate()?;
        Ok(d)
    }

    pub fn uniform(data: &Dataset, shift: f64) -> Result<Self> {
        let p = 1.0 / data.len() as f64;
        let atoms = data
            .points()
            .iter()
            .map(|&(x, y)| Atom { x, y, prob: p })
            .collect();
        FiniteDistribution::new(atoms, shift)
    }

    /// Uniform over [`example_dataset`], shifted by `shift`.
    pub fn example(shift: f64) -> Self {
        FiniteDistribution::uniform(&example_dataset(), shift)
            .expect("static distribution is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() {
            return Err(Error::Config("distribution has no atoms".into()));
        }
        if !self.shift.is_finite() {
            return Err(Error::Config("shift must be finite".into()));
        }
        let mut total = 0.0;
        for a in &self.atoms {
            if !(a.x.is_finite() && a.y.is_finite()) || !(a.prob > 0.0 && a.prob.is_finite()) {
                return Err(Error::Config(format!("invalid atom {a:?}")));
            }
            total += a.prob;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    /// Reads atoms from CSV with header `x,y,p`.
    pub fn read_csv<R: Read>(input: R, shift: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.len() != 3 || &headers[0] != "x" || &headers[1] != "y" || &headers[2] != "p" {
            return Err(Error::Config(
                "distribution CSV must have header x,y,p".into(),
            ));
        }
        let mut atoms = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            atoms.push(Atom {
                x: parse_field(&rec[0])?,
                y: parse_field(&rec[1])?,
                prob: parse_field(&rec[2])?,
            });
        }
        FiniteDistribution::new(atoms, shift)
    }
}

/// `n` i.i.d. draws from the atoms, with the shift applied.
pub fn sample(dist: &FiniteDistribution, n: usize, seed: u64) -> Result<Dataset> {
    dist.validate()?;
    if n == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    let idx = WeightedIndex::new(dist.atoms.iter().map(|a| a.prob))
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let a = dist.atoms[idx.sample(&mut rng)];
            (a.x, a.y + dist.shift)
        })
        .collect();
    Dataset::new(points)
}

/// Regression data of one side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SideSummary {
    /// `(1/n) Σ [[x², x], [x, 1]]` over the side, with n the full size.
    pub m: Mat2,
    /// `(1/n) Σ (x y, y)` over the side.
    pub u0: Vec2,
    /// Optimal (slope, intercept); absent when `m` is numerically singular.
    pub v_opt: Option<Vec2>,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Per-side affine least-squares summary of a dataset or distribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressionSummary {
    pub sides: [SideSummary; 2],
    /// Largest |optimal slope| over sides with an optimum.
    pub psi_p: f64,
    /// Largest |optimal intercept| over sides with an optimum.
    pub psi_q: f64,
    pub x_underbar: f64,
    /// `(1/2n) Σ (y − p_opt x − q_opt)²` over nonzero inputs, when both
    /// optima exist.
    pub best_affine_loss: Option<f64>,
}

/// Relative determinant threshold below which a 2×2 moment matrix counts as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

fn is_singular(m: &Mat2) -> bool {
    let tr = m[(0, 0)] + m[(1, 1)];
    m.determinant() <= SINGULAR_TOL * (tr / 2.0) * (tr / 2.0)
}

fn solve2(m: &Mat2, rhs: &Vec2) -> Vec2 {
    let det = m.determinant();
    Vec2::new(
        (m[(1, 1)] * rhs[0] - m[(0, 1)] * rhs[1]) / det,
        (m[(0, 0)] * rhs[1] - m[(1, 0)] * rhs[0]) / det,
    )
}

fn summarize(points: &[(f64, f64, f64)], total: f64) -> RegressionSummary {
    let mut m = [Mat2::zeros(); 2];
    let mut u0 = [Vec2::zeros(); 2];
    let mut x_underbar = f64::INFINITY;
    for &(x, y, wt) in points {
        x_underbar = x_underbar.min(x.abs());
        if let Some(s) = Sign::of(x) {
            let k = s.index();
            m[k][(0, 0)] += wt * x * x;
            m[k][(0, 1)] += wt * x;
            m[k][(1, 1)] += wt;
            u0[k][0] += wt * x * y;
            u0[k][1] += wt * y;
        }
    }
    let sides = [0, 1].map(|k| {
        let mut mk = m[k] / total;
        mk[(1, 0)] = mk[(0, 1)];
        let uk = u0[k] / total;
        let v_opt = (!is_singular(&mk)).then(|| solve2(&mk, &uk));
        let eig = jacobi_eigen(&mk).expect("finite 2x2 moments");
        SideSummary {
            m: mk,
            u0: uk,
            v_opt,
            lambda_min: eig.values[1],
            lambda_max: eig.values[0],
        }
    });
    let (mut psi_p, mut psi_q) = (0.0f64, 0.0f64);
    for s in &sides {
        if let Some(v) = s.v_opt {
            psi_p = psi_p.max(v[0].abs());
            psi_q = psi_q.max(v[1].abs());
        }
    }
    let best_affine_loss = match (sides[0].v_opt, sides[1].v_opt) {
        (Some(vp), Some(vn)) => {
            let mut s = 0.0;
            for &(x, y, wt) in points {
                let v = match Sign::of(x) {
                    Some(Sign::Pos) => vp,
                    Some(Sign::Neg) => vn,
                    None => continue,
                };
                let e = y - v[0] * x - v[1];
                s += wt * e * e;
            }
            Some(s / (2.0 * total))
        }
        _ => None,
    };
    RegressionSummary {
        sides,
        psi_p,
        psi_q,
        x_underbar,
        best_affine_loss,
    }
}

impl RegressionSummary {
    pub fn side(&self, s: Sign) -> &SideSummary {
        &self.sides[s.index()]
    }

    pub fn both_invertible(&self) -> bool {
        self.sides.iter().all(|s| s.v_opt.is_some())
    }

    /// Both optima, or a singularity error naming the failing side.
    pub fn v_opt(&self) -> Result<[Vec2; 2]> {
        match (self.sides[0].v_opt, self.sides[1].v_opt) {
            (Some(p), Some(n)) => Ok([p, n]),
            (None, _) => Err(Error::Singular(
                "positive-side moment matrix is singular".into(),
            )),
            (_, None) => Err(Error::Singular(
                "negative-side moment matrix is singular".into(),
            )),
        }
    }

    /// Optimal (p_1, p_{-1}, q_1, q_{-1}).
    pub fn v_opt4(&self) -> Result<crate::linalg::Vec4> {
        let [p, n] = self.v_opt()?;
        Ok(crate::linalg::Vec4::new(p[0], n[0], p[1], n[1]))
    }

    /// The two per-side moment matrices as one 4×4 matrix in the ordering
    /// (p_1, p_{-1}, q_1, q_{-1}).
    pub fn m4(&self) -> Mat4 {
        let mut out = Mat4::zeros();
        for s in Sign::BOTH {
            let k = s.index();
            let m = &self.sides[k].m;
            out[(k, k)] = m[(0, 0)];
            out[(k, 2 + k)] = m[(0, 1)];
            out[(2 + k, k)] = m[(1, 0)];
            out[(2 + k, 2 + k)] = m[(1, 1)];
        }
        out
    }
}

/// Summary with the 1/n normalization over the full dataset.
pub fn regression_summary(data: &Dataset) -> RegressionSummary {
    let pts: Vec<_> = data.points().iter().map(|&(x, y)| (x, y, 1.0)).collect();
    summarize(&pts, data.len().max(1) as f64)
}

/// Exact population summary over the atoms.
pub fn distribution_summary(dist: &FiniteDistribution) -> RegressionSummary {
    let pts: Vec<_> = dist
        .atoms
        .iter()
        .map(|a| (a.x, a.y + dist.shift, a.prob))
        .collect();
    summarize(&pts, 1.0)
}

/// Computable versions of the four data assumptions for a finite distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Moment matrix invertible, indexed by [`Sign::index`].
    pub p1_invertible: [bool; 2],
    /// Largest δ with no mass in (−δ, δ).
    pub p2_gap: f64,
    pub p3_psi_q_zero: bool,
    pub psi_q: f64,
    /// Best risk over two-sided affine predictors minus the Bayes risk.
    pub p4_excess: f64,
}

pub fn check_assumptions(dist: &FiniteDistribution) -> Result<AssumptionReport> {
    dist.validate()?;
    let summary = distribution_summary(dist);
    let p1_invertible = [
        summary.sides[0].v_opt.is_some(),
        summary.sides[1].v_opt.is_some(),
    ];
    let p2_gap = dist
        .atoms
        .iter()
        .map(|a| a.x.abs())
        .fold(f64::INFINITY, f64::min);

    // Bayes predictor: conditional mean at each distinct x.
    let mut by_x: Vec<(f64, f64, f64)> = Vec::new();
    for a in &dist.atoms {
        let y = a.y + dist.shift;
        match by_x.iter_mut().find(|e| e.0 == a.x) {
            Some(e) => {
                e.1 += a.prob;
                e.2 += a.prob * y;
            }
            None => by_x.push((a.x, a.prob, a.prob * y)),
        }
    }
    let mut bayes = 0.0;
    for a in dist.atoms.iter().filter(|a| a.x != 0.0) {
        let e = by_x.iter().find(|e| e.0 == a.x).expect("x recorded");
        let r = a.y + dist.shift - e.2 / e.1;
        bayes += a.prob * r * r;
    }
    bayes *= 0.5;
    let p4_excess = summary
        .best_affine_loss
        .map(|l| l - bayes)
        .unwrap_or(f64::INFINITY);
    Ok(AssumptionReport {
        p1_invertible,
        p2_gap,
        p3_psi_q_zero: summary.both_invertible() && summary.psi_q <= 1e-12,
        psi_q: summary.psi_q,
        p4_excess,
    })
}

fn side_is_done(points: &[(f64, f64)]) -> bool {
    let n = points.len().max(1) as f64;
    let pts: Vec<_> = points.iter().map(|&(x, y)| (x, y, 1.0)).collect();
    let s = summarize(&pts, n);
    let k = Sign::of(points.first().map_or(1.0, |p| p.0))
        .unwrap_or(Sign::Pos)
        .index();
    let ymax = points.iter().fold(0.0f64, |acc, p| acc.max(p.1.abs()));
    match s.sides[k].v_opt {
        Some(v) => v[1].abs() <= 1e-12 * (1.0 + ymax),
        None => false,
    }
}

/// Adds at most three points so that both sides get invertible moment
/// matrices and both optimal intercepts vanish.
///
/// An empty side is populated with one point at `±(1 + max|x|)`, y = 0.
/// A side that still fails gets one more point at `x' = σ(1 + max_side |x|)`
/// whose ordinate solves the (affine in y') equation `q_opt(y') = 0`.
pub fn augment_three_points(data: &Dataset) -> Result<Dataset> {
    if data.is_empty() {
        return Err(Error::Domain("cannot augment an empty dataset".into()));
    }
    if data.points().iter().any(|p| p.0 == 0.0) {
        return Err(Error::Domain(
            "augmentation requires all inputs nonzero".into(),
        ));
    }
    let mut out = data.clone();
    let reach = 1.0
        + data
            .points()
            .iter()
            .fold(0.0f64, |acc, p| acc.max(p.0.abs()));
    for s in Sign::BOTH {
        if out.side(s).is_empty() {
            out.push(s.value() * reach, 0.0);
        }
    }
    for s in Sign::BOTH {
        let side = out.side(s);
        if side_is_done(&side) {
            continue;
        }
        let xp = s.value() * (1.0 + side.iter().fold(0.0f64, |acc, p| acc.max(p.0.abs())));
        // Unnormalized moments; the optimum does not depend on the scale.
        let mut mm = Mat2::new(xp * xp, xp, xp, 1.0);
        let mut t = Vec2::zeros();
        for &(x, y) in &side {
            mm[(0, 0)] += x * x;
            mm[(0, 1)] += x;
            mm[(1, 0)] += x;
            mm[(1, 1)] += 1.0;
            t[0] += x * y;
            t[1] += y;
        }
        if is_singular(&mm) {
            return Err(Error::Internal("augmented side is still singular".into()));
        }
        let base = solve2(&mm, &t)[1];
        let coef = solve2(&mm, &Vec2::new(xp, 1.0))[1];
        if coef.abs() < 1e-12 {
            return Err(Error::Internal(
                "intercept does not depend on the added ordinate".into(),
            ));
        }
        out.push(xp, -base / coef);
    }
    Ok(out)
}

/// Dataset with d-dimensional inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedDataset {
    pub d: usize,
    pub points: Vec<(Vec<f64>, f64)>,
}

impl EmbeddedDataset {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut header: Vec<String> = (1..=self.d).map(|k| format!("x{k}")).collect();
        header.push("y".into());
        wtr.write_record(&header)?;
        for (x, y) in &self.points {
            let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        let d = headers.len().saturating_sub(1);
        let ok =
            d >= 1 && (0..d).all(|k| headers[k] == format!("x{}", k + 1)) && &headers[d] == "y";
        if !ok {
            return Err(Error::Config(
                "embedded CSV must have header x1,...,xd,y".into(),
            ));
        }
        let mut points = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let x = (0..d)
                .map(|k| parse_field(&rec[k]))
                .collect::<Result<Vec<_>>>()?;
            points.push((x, parse_field(&rec[d])?));
        }
        Ok(EmbeddedDataset { d, points })
    }
}

/// Places every input on the line spanned by the unit vector `z`.
pub fn embed(data: &Dataset, z: &[f64]) -> Result<EmbeddedDataset> {
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if z.is_empty() || (norm - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!(
            "embedding direction must be a unit vector, norm = {norm}"
        )));
    }
    let points = data
        .points()
        .iter()
        .map(|&(x, y)| (z.iter().map(|zk| x * zk).collect(), y))
        .collect();
    Ok(EmbeddedDataset { d: z.len(), points })
}
