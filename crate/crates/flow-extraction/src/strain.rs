use crate::grid::Grid;
use crate::solver::FlowField;

/// Optical strain: magnitude of the flow's first-order derivatives,
///
/// ```text
/// Vz = sqrt((dVx/dx)^2 + (dVy/dy)^2 + 1/2 ((dVx/dy)^2 + (dVy/dx)^2))
/// ```
///
/// using central differences in the interior and one-sided differences
/// at the borders. Non-negative everywhere by construction.
pub fn optical_strain(flow: &FlowField) -> Grid {
    let (h, w) = (flow.height(), flow.width());
    let mut out = Grid::zeros(h, w);
    let diff = |g: &Grid, y: usize, x: usize, horizontal: bool| -> f64 {
        if horizontal {
            if x == 0 {
                g.at(y, 1) - g.at(y, 0)
            } else if x == w - 1 {
                g.at(y, w - 1) - g.at(y, w - 2)
            } else {
                (g.at(y, x + 1) - g.at(y, x - 1)) * 0.5
            }
        } else if y == 0 {
            g.at(1, x) - g.at(0, x)
        } else if y == h - 1 {
            g.at(h - 1, x) - g.at(h - 2, x)
        } else {
            (g.at(y + 1, x) - g.at(y - 1, x)) * 0.5
        }
    };
    for y in 0..h {
        for x in 0..w {
            let dvx_dx = diff(&flow.vx, y, x, true);
            let dvx_dy = diff(&flow.vx, y, x, false);
            let dvy_dx = diff(&flow.vy, y, x, true);
            let dvy_dy = diff(&flow.vy, y, x, false);
            let v = dvx_dx * dvx_dx
                + dvy_dy * dvy_dy
                + 0.5 * (dvx_dy * dvx_dy + dvy_dx * dvy_dx);
            out.set(y, x, v.sqrt());
        }
    }
    out
}
