use approx::assert_abs_diff_eq;
use flow_extraction::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth random texture: sum of Gaussian blobs, normalized to
/// [0.2, 0.8] so warps stay in range.
fn smooth_texture(h: usize, w: usize, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..30)
        .map(|_| {
            (
                rng.gen::<f64>() * h as f64,
                rng.gen::<f64>() * w as f64,
                rng.gen::<f64>() * 8.0 + 3.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            )
        })
        .collect();
    let mut px = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.0;
            for &(cy, cx, s, a) in &blobs {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                v += a * (-d2 / (2.0 * s * s)).exp();
            }
            px[y * w + x] = v;
        }
    }
    let (lo, hi) = px.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| {
        (l.min(v), h.max(v))
    });
    for v in &mut px {
        *v = 0.2 + 0.6 * (*v - lo) / (hi - lo);
    }
    Frame::new(w, h, px).unwrap()
}

/// Translate content by (dx, dy): the apex shows the onset content
/// moved by +d, i.e. apex(p) = onset(p - d) with bilinear sampling.
fn translate(frame: &Frame, dx: f64, dy: f64) -> Frame {
    let g = frame.to_grid();
    let (h, w) = (frame.height(), frame.width());
    let mut px = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            px[y * w + x] = g
                .sample_bilinear(y as f64 - dy, x as f64 - dx)
                .clamp(0.0, 1.0);
        }
    }
    Frame::new(w, h, px).unwrap()
}

fn interior_mean(field: &Grid, margin: usize, f: impl Fn(f64) -> f64) -> f64 {
    let (h, w) = (field.height, field.width);
    let mut acc = 0.0;
    let mut count = 0usize;
    for y in margin..h - margin {
        for x in margin..w - margin {
            acc += f(field.at(y, x));
            count += 1;
        }
    }
    acc / count as f64
}

#[test]
fn zero_motion_gives_zero_flow() {
    let frame = smooth_texture(48, 48, 1);
    let flow = estimate_flow(&frame, &frame, &FlowSolverConfig::default()).unwrap();
    for v in flow.vx.data.iter().chain(flow.vy.data.iter()) {
        assert!(v.abs() < 1e-6, "flow {v} for identical frames");
    }
}

#[test]
fn translation_recovered() {
    let onset = smooth_texture(64, 64, 2);
    let apex = translate(&onset, 2.0, 0.0);
    let flow = estimate_flow(&onset, &apex, &FlowSolverConfig::default()).unwrap();
    let mean_vx = interior_mean(&flow.vx, 8, |v| v);
    let mean_abs_vy = interior_mean(&flow.vy, 8, f64::abs);
    assert!((1.8..=2.2).contains(&mean_vx), "mean Vx {mean_vx}");
    assert!(mean_abs_vy < 0.2, "mean |Vy| {mean_abs_vy}");
}

#[test]
fn mismatched_dimensions_error() {
    let a = smooth_texture(32, 32, 3);
    let b = smooth_texture(32, 48, 3);
    assert!(matches!(
        estimate_flow(&a, &b, &FlowSolverConfig::default()),
        Err(FlowError::DimensionMismatch(_))
    ));
}

/// Rotating the frame pair by 90 degrees rotates the flow field:
/// under clockwise rotation (x,y) -> (H-1-y, x), a displacement
/// (dx,dy) maps to (-dy, dx).
#[test]
fn rotation_equivariance() {
    fn rot90cw(frame: &Frame) -> Frame {
        let (h, w) = (frame.height(), frame.width());
        let g = frame.to_grid();
        let mut px = vec![0.0f64; h * w];
        for y in 0..w {
            for x in 0..h {
                // out(y, x) = in(h-1-x, y)
                px[y * h + x] = g.at(h - 1 - x, y);
            }
        }
        Frame::new(h, w, px).unwrap()
    }

    let onset = smooth_texture(64, 64, 4);
    let apex = translate(&onset, 1.5, 0.5);
    let cfg = FlowSolverConfig::default();
    let flow = estimate_flow(&onset, &apex, &cfg).unwrap();
    let flow_rot = estimate_flow(&rot90cw(&onset), &rot90cw(&apex), &cfg).unwrap();

    let (h, w) = (64usize, 64usize);
    let margin = 8;
    let mut mad = 0.0;
    let mut count = 0usize;
    for y in margin..h - margin {
        for x in margin..w - margin {
            let (vx, vy) = (flow.vx.at(y, x), flow.vy.at(y, x));
            // (y, x) maps to (x, h-1-y) in the rotated frame.
            let (ry, rx) = (x, h - 1 - y);
            let (rvx, rvy) = (flow_rot.vx.at(ry, rx), flow_rot.vy.at(ry, rx));
            mad += (rvx - (-vy)).abs() + (rvy - vx).abs();
            count += 2;
        }
    }
    mad /= count as f64;
    assert!(mad < 0.1, "rotation equivariance MAD {mad}");
}

#[test]
fn flow_sign_antisymmetry() {
    let onset = smooth_texture(64, 64, 5);
    for (dx, dy) in [(1.0, 0.0), (0.0, 2.0), (2.0, 1.0), (3.0, 0.0)] {
        let apex = translate(&onset, dx, dy);
        let cfg = FlowSolverConfig::default();
        let fwd = estimate_flow(&onset, &apex, &cfg).unwrap();
        let bwd = estimate_flow(&apex, &onset, &cfg).unwrap();
        let mut mad = 0.0;
        let mut count = 0;
        for y in 8..56 {
            for x in 8..56 {
                mad += (fwd.vx.at(y, x) + bwd.vx.at(y, x)).abs();
                mad += (fwd.vy.at(y, x) + bwd.vy.at(y, x)).abs();
                count += 2;
            }
        }
        mad /= count as f64;
        assert!(mad < 0.15, "antisymmetry MAD {mad} for ({dx},{dy})");
    }
}

#[test]
fn energy_monotone_across_irls_iterations() {
    let mut total = 0usize;
    let mut non_increasing = 0usize;
    for seed in 0..3u64 {
        let onset = smooth_texture(48, 48, 100 + seed);
        let apex = translate(&onset, 1.0 + seed as f64 * 0.5, 0.5);
        let (_, trace) =
            estimate_flow_with_trace(&onset, &apex, &FlowSolverConfig::default()).unwrap();
        assert!(!trace.finest_energies.is_empty());
        for warp in &trace.finest_energies {
            for pair in warp.windows(2) {
                total += 1;
                if pair[1] <= pair[0] + 1e-9 {
                    non_increasing += 1;
                }
            }
        }
    }
    let frac = non_increasing as f64 / total as f64;
    assert!(frac >= 0.95, "only {frac:.3} of IRLS steps non-increasing");
}

#[test]
fn flow_determinism() {
    let onset = smooth_texture(48, 48, 6);
    let apex = translate(&onset, 1.0, -1.0);
    let cfg = FlowSolverConfig::default();
    let a = estimate_flow(&onset, &apex, &cfg).unwrap();
    let b = estimate_flow(&onset, &apex, &cfg).unwrap();
    assert!(a
        .vx
        .data
        .iter()
        .zip(&b.vx.data)
        .chain(a.vy.data.iter().zip(&b.vy.data))
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn strain_identities() {
    let (h, w) = (20usize, 20usize);
    // Uniform flow: zero strain.
    let uniform = FlowField {
        vx: Grid::from_vec(h, w, vec![3.0; h * w]),
        vy: Grid::from_vec(h, w, vec![-1.5; h * w]),
    };
    let vz = optical_strain(&uniform);
    for &v in &vz.data {
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
    }

    // Vx = x: pure stretch, strain 1 in the interior.
    let mut vx = Grid::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            vx.set(y, x, x as f64);
        }
    }
    let shear_free = FlowField {
        vx,
        vy: Grid::zeros(h, w),
    };
    let vz = optical_strain(&shear_free);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            assert_abs_diff_eq!(vz.at(y, x), 1.0, epsilon = 1e-12);
        }
    }

    // Vy = x: pure shear, strain sqrt(1/2) in the interior.
    let mut vy = Grid::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            vy.set(y, x, x as f64);
        }
    }
    let shear = FlowField {
        vx: Grid::zeros(h, w),
        vy,
    };
    let vz = optical_strain(&shear);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            assert_abs_diff_eq!(vz.at(y, x), 0.5f64.sqrt(), epsilon = 1e-12);
        }
    }
}

#[test]
fn strain_is_non_negative_on_random_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let h = rng.gen_range(8..24);
        let w = rng.gen_range(8..24);
        let flow = FlowField {
            vx: Grid::from_vec(h, w, (0..h * w).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect()),
            vy: Grid::from_vec(h, w, (0..h * w).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect()),
        };
        let vz = optical_strain(&flow);
        assert!(vz.data.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn assemble_identity_resolution_preserves_values() {
    let onset = smooth_texture(48, 48, 8);
    let apex = translate(&onset, 1.0, 0.5);
    let flow = estimate_flow(&onset, &apex, &FlowSolverConfig::default()).unwrap();
    let map = assemble_flow_map(&flow, 48).unwrap();
    let vz = optical_strain(&flow);
    for i in 0..48 * 48 {
        assert_abs_diff_eq!(map.vx[i] as f64, flow.vx.data[i], epsilon = 1e-6);
        assert_abs_diff_eq!(map.vy[i] as f64, flow.vy.data[i], epsilon = 1e-6);
        assert_abs_diff_eq!(map.vz[i] as f64, vz.data[i], epsilon = 1e-6);
    }
}

#[test]
fn assemble_rescales_displacements() {
    let (h, w) = (120usize, 120usize);
    let flow = FlowField {
        vx: Grid::from_vec(h, w, vec![2.0; h * w]),
        vy: Grid::from_vec(h, w, vec![4.0; h * w]),
    };
    let map = assemble_flow_map(&flow, 60).unwrap();
    for i in 0..60 * 60 {
        assert_abs_diff_eq!(map.vx[i], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(map.vy[i], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(map.vz[i], 0.0, epsilon = 1e-6);
    }
    assert!(assemble_flow_map(&flow, 8).is_err());
}

#[test]
fn checkerboard_downsampling_preserves_mean() {
    let (h, w) = (40usize, 40usize);
    let mut g = Grid::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            g.set(y, x, ((x + y) % 2) as f64);
        }
    }
    let down = g.resize_bilinear(20, 20);
    let mean_orig = g.data.iter().sum::<f64>() / g.data.len() as f64;
    let mean_down = down.data.iter().sum::<f64>() / down.data.len() as f64;
    assert!(
        (mean_down - mean_orig).abs() / mean_orig < 0.05,
        "mean {mean_orig} -> {mean_down}"
    );
}

#[test]
fn pgm_round_trip_and_normalization() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("frame.pgm");
    let frame = smooth_texture(32, 24, 9);
    write_frame(&path, &frame).unwrap();
    let back = read_frame(&path).unwrap();
    assert_eq!(back.width(), 24);
    assert_eq!(back.height(), 32);
    // Quantization bounds the round-trip error by half a level.
    for (a, b) in frame.pixels().iter().zip(back.pixels()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-9);
    }

    // Hand-built P5 with a comment line and pixel value 128.
    let path2 = dir.path().join("hand.pgm");
    let mut bytes = b"P5\n# synthetic\n16 16\n255\n".to_vec();
    bytes.extend(std::iter::repeat(128u8).take(256));
    std::fs::write(&path2, bytes).unwrap();
    let frame = read_frame(&path2).unwrap();
    assert_abs_diff_eq!(frame.pixels()[0], 128.0 / 255.0, epsilon = 1e-9);

    let path3 = dir.path().join("trunc.pgm");
    std::fs::write(&path3, b"P5\n16 16\n255\n12345").unwrap();
    assert!(matches!(read_frame(&path3), Err(FlowError::Corrupt(_))));
}

#[test]
fn rcnf_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.rcnf");
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 60 * 60;
    let map = FlowMap::new(
        60,
        (0..n).map(|_| rng.gen::<f32>() * 4.0 - 2.0).collect(),
        (0..n).map(|_| rng.gen::<f32>() * 4.0 - 2.0).collect(),
        (0..n).map(|_| rng.gen::<f32>()).collect(),
    )
    .unwrap();
    write_flow_map(&path, &map).unwrap();
    let back = read_flow_map(&path).unwrap();
    assert_eq!(back, map);

    let truncated = dir.path().join("trunc.rcnf");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(read_flow_map(&truncated), Err(FlowError::Corrupt(_))));
}

#[test]
fn apex_location_examples() {
    let base = smooth_texture(24, 24, 11);
    let bump = |frame: &Frame, amp: f64| {
        let mut px = frame.pixels().to_vec();
        for y in 8..16 {
            for x in 8..16 {
                px[y * 24 + x] = (px[y * 24 + x] + amp).clamp(0.0, 1.0);
            }
        }
        Frame::new(24, 24, px).unwrap()
    };

    // Single perturbed frame.
    let frames = vec![base.clone(), base.clone(), bump(&base, 0.2)];
    assert_eq!(locate_apex(&frames, 0).unwrap(), 2);

    // Monotone growth: last frame wins.
    let frames: Vec<Frame> = (0..5).map(|t| bump(&base, 0.04 * t as f64)).collect();
    assert_eq!(locate_apex(&frames, 0).unwrap(), 4);

    // Gaussian intensity profile peaking at frame 7 of 12.
    let frames: Vec<Frame> = (0..12)
        .map(|t| {
            let amp = 0.25 * (-((t as f64 - 7.0).powi(2)) / 8.0).exp();
            bump(&base, if t == 0 { 0.0 } else { amp })
        })
        .collect();
    assert_eq!(locate_apex(&frames, 0).unwrap(), 7);

    assert!(locate_apex(&frames[..1], 0).is_err());
}
