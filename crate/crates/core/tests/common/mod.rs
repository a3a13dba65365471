#![allow(dead_code)]

use cohortdid_core::{Panel, UnitRecord};

/// Panel rebuilt from the listed unit indices, relabelled so repeated
/// indices stay distinct.
pub fn subpanel(panel: &Panel, units: &[usize]) -> Panel {
    let mut input = panel.to_input();
    let all = std::mem::take(&mut input.units);
    input.units = units
        .iter()
        .enumerate()
        .map(|(k, &i)| UnitRecord {
            id: format!("{k:06}"),
            ..all[i].clone()
        })
        .collect();
    Panel::new(input).unwrap()
}

pub fn without(panel: &Panel, drop: usize) -> Panel {
    let keep: Vec<usize> = (0..panel.n_units()).filter(|&i| i != drop).collect();
    subpanel(panel, &keep)
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
}
