//! Quadrature rules on the reference segment, triangle and tetrahedron.
//!
//! Points are barycentric; weights sum to the reference measure (1, 1/2, 1/6).

use thiserror::Error;

pub const MAX_ORDER: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum QuadratureError {
    #[error("unsupported quadrature order {0} (supported 1..={MAX_ORDER})")]
    UnsupportedOrder(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Entity {
    Segment,
    Triangle,
    Tet,
}

impl Entity {
    pub fn reference_measure(self) -> f64 {
        match self {
            Entity::Segment => 1.0,
            Entity::Triangle => 0.5,
            Entity::Tet => 1.0 / 6.0,
        }
    }
}

/// A rule with barycentric points; unused trailing coordinates are zero.
#[derive(Clone, Debug)]
pub struct QuadRule {
    pub entity: Entity,
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weights rescaled to sum to one; multiply by the physical measure.
    pub fn unit_weights(&self) -> Vec<f64> {
        let m = self.entity.reference_measure();
        self.weights.iter().map(|w| w / m).collect()
    }
}

pub fn quadrature(entity: Entity, order: usize) -> Result<QuadRule, QuadratureError> {
    if order == 0 || order > MAX_ORDER {
        return Err(QuadratureError::UnsupportedOrder(order));
    }
    Ok(match entity {
        Entity::Segment => segment_rule(order),
        Entity::Triangle => triangle_rule(order),
        Entity::Tet => tet_rule(order),
    })
}

/// Gauss–Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[n - 1 - i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

fn segment_rule(order: usize) -> QuadRule {
    // n points integrate degree 2n - 1 exactly.
    let (x, w) = gauss_legendre(order / 2 + 1);
    QuadRule {
        entity: Entity::Segment,
        points: x.iter().map(|&s| [1.0 - s, s, 0.0, 0.0]).collect(),
        weights: w,
    }
}

fn triangle_rule(order: usize) -> QuadRule {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match order {
        1 => {
            points.push([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]);
            weights.push(0.5);
        }
        2 => {
            for k in 0..3 {
                let mut p = [1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.0];
                p[k] = 2.0 / 3.0;
                points.push(p);
                weights.push(1.0 / 6.0);
            }
        }
        3..=5 => {
            let s15 = 15f64.sqrt();
            points.push([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]);
            weights.push(9.0 / 80.0);
            for (a, w) in [((6.0 - s15) / 21.0, (155.0 - s15) / 2400.0), ((6.0 + s15) / 21.0, (155.0 + s15) / 2400.0)] {
                for k in 0..3 {
                    let mut p = [a, a, a, 0.0];
                    p[k] = 1.0 - 2.0 * a;
                    points.push(p);
                    weights.push(w);
                }
            }
        }
        _ => {
            // Collapsed Gauss product rule.
            let nu = (order + 2).div_ceil(2);
            let nv = (order + 1).div_ceil(2);
            let (xu, wu) = gauss_legendre(nu);
            let (xv, wv) = gauss_legendre(nv);
            for (u, au) in xu.iter().zip(&wu) {
                for (v, av) in xv.iter().zip(&wv) {
                    let x = *u;
                    let y = (1.0 - u) * v;
                    points.push([1.0 - x - y, x, y, 0.0]);
                    weights.push(au * av * (1.0 - u));
                }
            }
        }
    }
    QuadRule { entity: Entity::Triangle, points, weights }
}

fn tet_rule(order: usize) -> QuadRule {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match order {
        1 => {
            points.push([0.25; 4]);
            weights.push(1.0 / 6.0);
        }
        2 => {
            let a = 0.138_196_601_125_010_5;
            let b = 0.585_410_196_624_968_5;
            for k in 0..4 {
                let mut p = [a; 4];
                p[k] = b;
                points.push(p);
                weights.push(1.0 / 24.0);
            }
        }
        3..=5 => {
            for (a, w) in [
                (0.092_735_250_310_891_226_4, 0.012_248_840_519_393_658_26),
                (0.310_885_919_263_300_609_7, 0.018_781_320_953_002_641_80),
            ] {
                for k in 0..4 {
                    let mut p = [a; 4];
                    p[k] = 1.0 - 3.0 * a;
                    points.push(p);
                    weights.push(w);
                }
            }
            let a = 0.045_503_704_125_649_649_4;
            let b = 0.5 - a;
            for (i, j) in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] {
                let mut p = [b; 4];
                p[i] = a;
                p[j] = a;
                points.push(p);
                weights.push(0.007_091_003_462_846_911_1);
            }
        }
        _ => {
            let nu = (order + 3).div_ceil(2);
            let nv = (order + 2).div_ceil(2);
            let nw = (order + 1).div_ceil(2);
            let (xu, wu) = gauss_legendre(nu);
            let (xv, wv) = gauss_legendre(nv);
            let (xw, ww) = gauss_legendre(nw);
            for (u, au) in xu.iter().zip(&wu) {
                for (v, av) in xv.iter().zip(&wv) {
                    for (s, aw) in xw.iter().zip(&ww) {
                        let x = *u;
                        let y = (1.0 - u) * v;
                        let z = (1.0 - u) * (1.0 - v) * s;
                        points.push([1.0 - x - y - z, x, y, z]);
                        weights.push(au * av * aw * (1.0 - u) * (1.0 - u) * (1.0 - v));
                    }
                }
            }
        }
    }
    QuadRule { entity: Entity::Tet, points, weights }
}

/// Exact reference integral of a barycentric monomial in dimension `d`:
/// `∫ Π λi^ai = d! |ref| Π ai! / (Σ ai + d)!`.
pub fn barycentric_monomial_integral(entity: Entity, exps: &[u32]) -> f64 {
    let d = match entity {
        Entity::Segment => 1,
        Entity::Triangle => 2,
        Entity::Tet => 3,
    };
    let fact = |n: u32| -> f64 { (1..=n).map(|k| k as f64).product() };
    let s: u32 = exps.iter().take(d + 1).sum();
    let num: f64 = exps.iter().take(d + 1).map(|&a| fact(a)).product();
    fact(d as u32) * entity.reference_measure() * num / fact(s + d as u32)
}
