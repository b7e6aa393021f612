//! Probability fields of the policy over block ranges, with SVG and CSV export.
//!
//! Cell masses are computed from the Gaussian CDF of the raw action. Mass
//! beyond the range is assigned to the edge cells, matching the clamp applied
//! when raw actions are rescaled, so the field is the exact distribution of the
//! physical value on the grid.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::ScenarioGraph;
use crate::policy::PolicyParams;

pub const DEFAULT_BINS_1D: usize = 256;
pub const DEFAULT_BINS_2D: usize = 64;

/// Parent values fixed by name, in physical units.
pub type Conditioning<'a> = &'a [(String, f64)];

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub block: String,
    pub lower: f64,
    pub upper: f64,
    pub bins: usize,
}

impl Axis {
    fn new(graph: &ScenarioGraph, block: &str, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::config("heatmap resolution must be at least 1"));
        }
        let b = graph.block(block)?;
        Ok(Axis { block: block.to_string(), lower: b.lower(), upper: b.upper(), bins })
    }

    pub fn width(&self) -> f64 {
        (self.upper - self.lower) / self.bins as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lower + (i as f64 + 0.5) * self.width()
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.lower + i as f64 * self.width()
    }

    /// Cell holding `value`; values outside the range map to the edge cells.
    pub fn cell_of(&self, value: f64) -> usize {
        let i = ((value - self.lower) / self.width()).floor();
        i.clamp(0.0, (self.bins - 1) as f64) as usize
    }
}

/// Probability field over one block.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub axis: Axis,
    pub cells: Vec<f64>,
    /// Raw-action mean and sigma of the block under the conditioning used.
    pub mu: f64,
    pub sigma: f64,
}

/// Joint field over two blocks; `cells[j * x.bins + i]` is cell (x_i, y_j).
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap2d {
    pub x: Axis,
    pub y: Axis,
    pub cells: Vec<f64>,
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Probability of each physical cell for a raw Gaussian `N(mu, sigma)` pushed
/// through the block's clamp.
fn cell_masses(axis: &Axis, scale: f64, shift: f64, mu: f64, sigma: f64) -> Vec<f64> {
    let cdf = |phys: f64| normal_cdf(((phys - shift) / scale - mu) / sigma);
    let mut cells: Vec<f64> = (0..axis.bins)
        .map(|i| {
            let lo = if i == 0 { 0.0 } else { cdf(axis.edge(i)) };
            let hi = if i + 1 == axis.bins { 1.0 } else { cdf(axis.edge(i + 1)) };
            (hi - lo).max(0.0)
        })
        .collect();
    normalize(&mut cells);
    cells
}

fn normalize(cells: &mut [f64]) {
    let total: f64 = cells.iter().sum();
    if total > 0.0 {
        cells.iter_mut().for_each(|c| *c /= total);
    }
}

/// Raw actions for every block: entries named in `given` are fixed, the rest
/// take their conditional means in graph order.
pub fn conditioned_actions(params: &PolicyParams, state: &[f64], graph: &ScenarioGraph, given: Conditioning) -> Result<Vec<f64>> {
    let mut fixed = vec![None; graph.len()];
    for (name, value) in given {
        let k = graph
            .block_index(name)
            .ok_or_else(|| Error::config(format!("unknown conditioning block '{name}'")))?;
        if !value.is_finite() {
            return Err(Error::config(format!("conditioning value for '{name}' is not finite")));
        }
        let b = &graph.blocks[k];
        fixed[k] = Some((value - b.shift) / b.scale);
    }
    let mut actions = vec![0.0; graph.len()];
    for k in 0..graph.len() {
        actions[k] = match fixed[k] {
            Some(a) => a,
            None => params.conditional(state, graph, k, &actions)?.0,
        };
    }
    Ok(actions)
}

/// Distribution of block `block` given the state and the conditioning; unnamed
/// parents sit at their means.
pub fn policy_heatmap(
    params: &PolicyParams,
    state: &[f64],
    graph: &ScenarioGraph,
    block: &str,
    bins: usize,
    given: Conditioning,
) -> Result<Heatmap> {
    let axis = Axis::new(graph, block, bins)?;
    let k = graph.block_index(block).unwrap();
    let actions = conditioned_actions(params, state, graph, given)?;
    let (mu, sigma) = params.conditional(state, graph, k, &actions)?;
    let b = &graph.blocks[k];
    let cells = cell_masses(&axis, b.scale, b.shift, mu, sigma);
    Ok(Heatmap { axis, cells, mu, sigma })
}

/// Joint field of two blocks, `P(x | S) P(y | S, x)` with `y` conditioned on
/// each x cell center when `y` depends on `x`.
pub fn joint_heatmap(
    params: &PolicyParams,
    state: &[f64],
    graph: &ScenarioGraph,
    x_block: &str,
    y_block: &str,
    bins: usize,
    given: Conditioning,
) -> Result<Heatmap2d> {
    let x = Axis::new(graph, x_block, bins)?;
    let y = Axis::new(graph, y_block, bins)?;
    let kx = graph.block_index(x_block).unwrap();
    let ky = graph.block_index(y_block).unwrap();
    if kx == ky {
        return Err(Error::config("joint heatmap needs two distinct blocks"));
    }
    if depends_on(graph, kx, ky) {
        return joint_heatmap(params, state, graph, y_block, x_block, bins, given).map(|h| h.transposed());
    }
    let px = policy_heatmap(params, state, graph, x_block, bins, given)?;
    let by = &graph.blocks[ky];
    let y_depends = depends_on(graph, ky, kx);
    let mut cells = vec![0.0; bins * bins];
    let base = if y_depends { None } else { Some(policy_heatmap(params, state, graph, y_block, bins, given)?) };
    for i in 0..bins {
        let col = match &base {
            Some(h) => h.cells.clone(),
            None => {
                let mut g: Vec<(String, f64)> = given.iter().filter(|(n, _)| n != x_block).cloned().collect();
                g.push((x_block.to_string(), x.center(i)));
                let actions = conditioned_actions(params, state, graph, &g)?;
                let (mu, sigma) = params.conditional(state, graph, ky, &actions)?;
                cell_masses(&y, by.scale, by.shift, mu, sigma)
            }
        };
        for j in 0..bins {
            cells[j * bins + i] = px.cells[i] * col[j];
        }
    }
    normalize(&mut cells);
    Ok(Heatmap2d { x, y, cells })
}

fn depends_on(graph: &ScenarioGraph, child: usize, ancestor: usize) -> bool {
    graph.parents(child).iter().any(|&p| p == ancestor || depends_on(graph, p, ancestor))
}

impl Heatmap {
    pub fn total(&self) -> f64 {
        self.cells.iter().sum()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.cells)
    }

    /// Physical value at the center of the most probable cell.
    pub fn mode(&self) -> f64 {
        self.axis.center(self.argmax())
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{},probability\n", self.axis.block);
        for (i, c) in self.cells.iter().enumerate() {
            let _ = writeln!(out, "{},{:e}", self.axis.center(i), c);
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0, 320.0, 48.0);
        let peak = self.cells.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let bw = (w - 2.0 * pad) / self.axis.bins as f64;
        let mut svg = svg_open(w, h);
        for (i, c) in self.cells.iter().enumerate() {
            let bh = (h - 2.0 * pad) * c / peak;
            let _ = write!(
                svg,
                r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{}"/>"#,
                pad + i as f64 * bw,
                h - pad - bh,
                bw,
                bh,
                color(c / peak)
            );
        }
        axis_labels(&mut svg, &self.axis, w, h, pad, true);
        let _ = write!(svg, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">P({})</text>"#, w / 2.0, pad / 2.0, self.axis.block);
        svg.push_str("</svg>\n");
        svg
    }
}

impl Heatmap2d {
    pub fn total(&self) -> f64 {
        self.cells.iter().sum()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells[j * self.x.bins + i]
    }

    /// `(i, j)` of the most probable cell.
    pub fn argmax(&self) -> (usize, usize) {
        let a = argmax(&self.cells);
        (a % self.x.bins, a / self.x.bins)
    }

    /// Physical `(x, y)` at the center of the most probable cell.
    pub fn mode(&self) -> (f64, f64) {
        let (i, j) = self.argmax();
        (self.x.center(i), self.y.center(j))
    }

    /// Marginal over the x axis.
    pub fn marginal_x(&self) -> Vec<f64> {
        (0..self.x.bins).map(|i| (0..self.y.bins).map(|j| self.get(i, j)).sum()).collect()
    }

    fn transposed(self) -> Heatmap2d {
        let (nx, ny) = (self.x.bins, self.y.bins);
        let mut cells = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                cells[i * ny + j] = self.cells[j * nx + i];
            }
        }
        Heatmap2d { x: self.y, y: self.x, cells }
    }

    /// One row per y cell (top row is the largest y), one column per x cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("y\\x");
        for i in 0..self.x.bins {
            let _ = write!(out, ",{}", self.x.center(i));
        }
        out.push('\n');
        for j in (0..self.y.bins).rev() {
            let _ = write!(out, "{}", self.y.center(j));
            for i in 0..self.x.bins {
                let _ = write!(out, ",{:e}", self.get(i, j));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (640.0, 640.0, 48.0);
        let peak = self.cells.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let cw = (w - 2.0 * pad) / self.x.bins as f64;
        let ch = (h - 2.0 * pad) / self.y.bins as f64;
        let mut svg = svg_open(w, h);
        for j in 0..self.y.bins {
            for i in 0..self.x.bins {
                let _ = write!(
                    svg,
                    r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{}"/>"#,
                    pad + i as f64 * cw,
                    h - pad - (j + 1) as f64 * ch,
                    cw + 0.05,
                    ch + 0.05,
                    color(self.get(i, j) / peak)
                );
            }
        }
        axis_labels(&mut svg, &self.x, w, h, pad, true);
        axis_labels(&mut svg, &self.y, w, h, pad, false);
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">P({}, {})</text>"#,
            w / 2.0,
            pad / 2.0,
            self.x.block,
            self.y.block
        );
        svg.push_str("</svg>\n");
        svg
    }
}

fn argmax(cells: &[f64]) -> usize {
    let mut best = 0;
    for (i, c) in cells.iter().enumerate() {
        if *c > cells[best] {
            best = i;
        }
    }
    best
}

fn svg_open(w: f64, h: f64) -> String {
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}"><rect width="{w}" height="{h}" fill="white"/>"#
    )
}

fn axis_labels(svg: &mut String, axis: &Axis, w: f64, h: f64, pad: f64, horizontal: bool) {
    for t in 0..=4 {
        let f = t as f64 / 4.0;
        let v = axis.lower + f * (axis.upper - axis.lower);
        if horizontal {
            let x = pad + f * (w - 2.0 * pad);
            let _ = write!(svg, r#"<text x="{x:.1}" y="{:.1}" font-size="11" text-anchor="middle">{v:.1}</text>"#, h - pad + 16.0);
        } else {
            let y = h - pad - f * (h - 2.0 * pad);
            let _ = write!(svg, r#"<text x="{:.1}" y="{y:.1}" font-size="11" text-anchor="end">{v:.1}</text>"#, pad - 4.0);
        }
    }
    if horizontal {
        let _ = write!(svg, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#, w / 2.0, h - 8.0, axis.block);
    } else {
        let _ = write!(
            svg,
            r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            h / 2.0,
            h / 2.0,
            axis.block
        );
    }
}

/// White to magenta ramp.
fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let g = (255.0 * (1.0 - t)).round() as u8;
    let r = (255.0 - 55.0 * t).round() as u8;
    let b = (255.0 - 75.0 * t).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}
