//! Dense 2-d scalar fields in `f64`, the solver's working type.

/// Row-major H x W grid of doubles.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Grid {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(height * width, data.len());
        Grid {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    fn at_clamped(&self, y: isize, x: isize) -> f64 {
        let yy = y.clamp(0, self.height as isize - 1) as usize;
        let xx = x.clamp(0, self.width as isize - 1) as usize;
        self.at(yy, xx)
    }

    /// Bilinear sample at fractional coordinates, clamping to the
    /// border. Lerp form: constant grids sample to the exact constant.
    pub fn sample_bilinear(&self, y: f64, x: f64) -> f64 {
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let y0 = yc.floor() as usize;
        let x0 = xc.floor() as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let fy = yc - y0 as f64;
        let fx = xc - x0 as f64;
        let v00 = self.at(y0, x0);
        let v01 = self.at(y0, x1);
        let v10 = self.at(y1, x0);
        let v11 = self.at(y1, x1);
        let top = v00 + fx * (v01 - v00);
        let bot = v10 + fx * (v11 - v10);
        top + fy * (bot - top)
    }

    /// Bilinear resize with pixel-center alignment.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Grid {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let ry = self.height as f64 / height as f64;
        let rx = self.width as f64 / width as f64;
        let mut out = Grid::zeros(height, width);
        for oy in 0..height {
            let sy = (oy as f64 + 0.5) * ry - 0.5;
            for ox in 0..width {
                let sx = (ox as f64 + 0.5) * rx - 0.5;
                out.set(oy, ox, self.sample_bilinear(sy, sx));
            }
        }
        out
    }

    /// 3x3 box smoothing with replicate borders.
    pub fn box3(&self) -> Grid {
        let mut out = Grid::zeros(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        acc += self.at_clamped(y as isize + dy, x as isize + dx);
                    }
                }
                out.set(y, x, acc / 9.0);
            }
        }
        out
    }

    /// Central-difference x derivative with replicate borders.
    pub fn dx_central(&self) -> Grid {
        let mut out = Grid::zeros(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                let a = self.at_clamped(y as isize, x as isize + 1);
                let b = self.at_clamped(y as isize, x as isize - 1);
                out.set(y, x, (a - b) * 0.5);
            }
        }
        out
    }

    /// Central-difference y derivative with replicate borders.
    pub fn dy_central(&self) -> Grid {
        let mut out = Grid::zeros(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                let a = self.at_clamped(y as isize + 1, x as isize);
                let b = self.at_clamped(y as isize - 1, x as isize);
                out.set(y, x, (a - b) * 0.5);
            }
        }
        out
    }

    /// Median filter over a `(2r+1)^2` window intersected with the
    /// grid. Even-sized border windows take the lower median, so the
    /// result is deterministic everywhere.
    pub fn median_filter(&self, radius: usize) -> Grid {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as isize;
        let mut out = Grid::zeros(self.height, self.width);
        let mut window: Vec<f64> = Vec::with_capacity((2 * radius + 1).pow(2));
        for y in 0..self.height as isize {
            for x in 0..self.width as isize {
                window.clear();
                for dy in -r..=r {
                    let yy = y + dy;
                    if yy < 0 || yy >= self.height as isize {
                        continue;
                    }
                    for dx in -r..=r {
                        let xx = x + dx;
                        if xx < 0 || xx >= self.width as isize {
                            continue;
                        }
                        window.push(self.at(yy as usize, xx as usize));
                    }
                }
                window.sort_by(|a, b| a.partial_cmp(b).unwrap());
                out.set(y as usize, x as usize, window[(window.len() - 1) / 2]);
            }
        }
        out
    }
}
