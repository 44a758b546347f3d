use super::index;

/// Normalised 1-D Gaussian taps covering ±3σ.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with clamp-to-border edges. `sigma` is in voxels.
pub fn gaussian_blur(data: &[f32], dims: [usize; 3], sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut cur = data.to_vec();
    let mut next = vec![0.0f32; data.len()];
    for axis in 0..3 {
        let n = dims[axis] as i64;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let p = [x, y, z];
                    let mut acc = 0.0f64;
                    for (t, &w) in k.iter().enumerate() {
                        let mut q = p;
                        q[axis] = (p[axis] as i64 + t as i64 - r).clamp(0, n - 1) as usize;
                        acc += w * cur[index(dims, q[0], q[1], q[2])] as f64;
                    }
                    next[index(dims, x, y, z)] = acc as f32;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Trilinear sample of `data` at a continuous voxel coordinate, clamped to the grid.
pub fn sample_trilinear(data: &[f32], dims: [usize; 3], p: [f64; 3]) -> f32 {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut t = [0f32; 3];
    for a in 0..3 {
        let c = p[a].clamp(0.0, (dims[a] - 1) as f64);
        lo[a] = c.floor() as usize;
        hi[a] = (lo[a] + 1).min(dims[a] - 1);
        t[a] = (c - lo[a] as f64) as f32;
    }
    let at = |x, y, z| data[index(dims, x, y, z)];
    let lerp = |a: f32, b: f32, t: f32| a + t * (b - a);
    let c00 = lerp(at(lo[0], lo[1], lo[2]), at(hi[0], lo[1], lo[2]), t[0]);
    let c10 = lerp(at(lo[0], hi[1], lo[2]), at(hi[0], hi[1], lo[2]), t[0]);
    let c01 = lerp(at(lo[0], lo[1], hi[2]), at(hi[0], lo[1], hi[2]), t[0]);
    let c11 = lerp(at(lo[0], hi[1], hi[2]), at(hi[0], hi[1], hi[2]), t[0]);
    lerp(lerp(c00, c10, t[1]), lerp(c01, c11, t[1]), t[2])
}

/// Nearest-voxel lookup at a continuous coordinate, clamped to the grid.
pub fn sample_nearest<T: Copy>(data: &[T], dims: [usize; 3], p: [f64; 3]) -> T {
    let q: [usize; 3] =
        std::array::from_fn(|a| p[a].round().clamp(0.0, (dims[a] - 1) as f64) as usize);
    data[index(dims, q[0], q[1], q[2])]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_constants_and_mass() {
        let dims = [6, 5, 4];
        let c = vec![0.3f32; 120];
        assert!(gaussian_blur(&c, dims, 1.5).iter().all(|v| (v - 0.3).abs() < 1e-6));
        let mut d = vec![0f32; 20 * 20 * 20];
        d[index([20; 3], 10, 10, 10)] = 1.0;
        let b = gaussian_blur(&d, [20; 3], 1.0);
        let s: f32 = b.iter().sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
}
