//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use nrlab_core::mechanism::{ActionSpace, Mechanism, MechanismKind, TieBreak};
use nrlab_core::simulator::Population;
use nrlab_core::smoothness::{AllPayUniform, BidFraction, DeviationRule, FpaLog, TopHalf};

pub struct Instance {
    pub name: String,
    pub mechanism: Mechanism,
    pub populations: Vec<Population>,
    pub rule: Box<dyn DeviationRule>,
}

impl Instance {
    pub fn value_space(&self) -> Vec<Vec<f64>> {
        nrlab_core::smoothness::product_value_space(
            &self
                .populations
                .iter()
                .map(|p| p.types.clone())
                .collect::<Vec<_>>(),
        )
    }
}

fn mech(kind: MechanismKind, grid: &[f64], n: usize) -> Mechanism {
    let space = ActionSpace::from_grids(vec![grid.to_vec(); n], 1.0).unwrap();
    Mechanism::new(kind, 1, space, TieBreak::LowestIndex).unwrap()
}

/// Tiny instances: at most 2 populations, 2 types and 3 actions.
pub fn corpus() -> Vec<Instance> {
    use MechanismKind::{AllPay, FirstPrice};
    let grids: [&[f64]; 3] = [&[0.0, 0.5], &[0.0, 0.5, 1.0], &[0.0, 0.25, 0.5]];
    let type_sets: [(&[f64], &[f64]); 4] = [
        (&[1.0], &[1.0]),
        (&[0.5, 1.0], &[1.0]),
        (&[0.5, 1.0], &[0.5, 1.0]),
        (&[0.25, 1.0], &[0.75]),
    ];
    let mut out = Vec::new();
    for (g, grid) in grids.iter().enumerate() {
        for (t, (a, b)) in type_sets.iter().enumerate() {
            let pops = vec![Population::new(a.to_vec()), Population::new(b.to_vec())];
            let fp_rules: Vec<(&str, Box<dyn DeviationRule>)> = vec![
                ("bid-half", Box::new(BidFraction { fraction: 0.5 })),
                ("log", Box::new(FpaLog)),
            ];
            for (rname, rule) in fp_rules {
                out.push(Instance {
                    name: format!("first-price grid{g} types{t} {rname}"),
                    mechanism: mech(FirstPrice, grid, 2),
                    populations: pops.clone(),
                    rule,
                });
            }
            let ap_rules: Vec<(&str, Box<dyn DeviationRule>)> = vec![
                ("uniform", Box::new(AllPayUniform)),
                ("top-half", Box::new(TopHalf)),
            ];
            for (rname, rule) in ap_rules {
                out.push(Instance {
                    name: format!("all-pay grid{g} types{t} {rname}"),
                    mechanism: mech(AllPay, grid, 2),
                    populations: pops.clone(),
                    rule,
                });
            }
        }
    }
    out.push(Instance {
        name: "single bidder two types".into(),
        mechanism: mech(FirstPrice, &[0.0, 0.5, 1.0], 1),
        populations: vec![Population::new(vec![0.5, 1.0])],
        rule: Box::new(BidFraction { fraction: 0.5 }),
    });
    out
}

/// Minimizes `c·x` over `{x ≥ 0 : G x ≥ 0, Σx = 1}` by enumerating every
/// basis of the standard form `[G −I; 1 0]`. Returns `None` if no basic
/// feasible solution exists.
pub fn vertex_enumeration_min(c: &[f64], g: &[Vec<f64>]) -> Option<f64> {
    let n = c.len();
    let r = g.len();
    let m = r + 1;
    let total = n + r;
    let column = |j: usize| -> Vec<f64> {
        let mut col = vec![0.0; m];
        if j < n {
            for (i, row) in g.iter().enumerate() {
                col[i] = row[j];
            }
            col[r] = 1.0;
        } else {
            col[j - n] = -1.0;
        }
        col
    };
    let columns: Vec<Vec<f64>> = (0..total).map(column).collect();
    let mut rhs = vec![0.0; m];
    rhs[r] = 1.0;
    let mut best: Option<f64> = None;
    let mut pick: Vec<usize> = (0..m).collect();
    loop {
        if let Some(x) = solve_square(
            &pick.iter().map(|&j| columns[j].clone()).collect::<Vec<_>>(),
            &rhs,
        ) {
            if x.iter().all(|&v| v >= -1e-9) {
                let obj: f64 = pick
                    .iter()
                    .zip(&x)
                    .filter(|(&j, _)| j < n)
                    .map(|(&j, v)| c[j] * v)
                    .sum();
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
        // Next combination in lexicographic order.
        let mut i = m;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if pick[i] < total - m + i {
                break;
            }
            if i == 0 && pick[0] >= total - m {
                return best;
            }
        }
        pick[i] += 1;
        for k in i + 1..m {
            pick[k] = pick[k - 1] + 1;
        }
    }
}

/// Gaussian elimination with partial pivoting on column vectors `cols`.
fn solve_square(cols: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let m = rhs.len();
    let mut a: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row: Vec<f64> = cols.iter().map(|c| c[i]).collect();
            row.push(rhs[i]);
            row
        })
        .collect();
    for col in 0..m {
        let p = (col..m).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[p][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, p);
        for i in 0..m {
            if i != col {
                let f = a[i][col] / a[col][col];
                if f != 0.0 {
                    for j in col..=m {
                        a[i][j] -= f * a[col][j];
                    }
                }
            }
        }
    }
    Some((0..m).map(|i| a[i][m] / a[i][i]).collect())
}
