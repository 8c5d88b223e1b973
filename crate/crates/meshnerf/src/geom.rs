//! Small fixed-size linear algebra: 3-vectors, 3x3/4x4 matrices, and the
//! SO(3) exponential map with its right Jacobian.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3 {
            x: self.y * o.z - self.z * o.y,
            y: self.z * o.x - self.x * o.z,
            z: self.x * o.y - self.y * o.x,
        }
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        self / n
    }

    pub fn min_components(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max_components(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn component(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3 {
    pub m: [[f64; 3]; 3],
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3 {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub fn from_rows(r0: Vec3, r1: Vec3, r2: Vec3) -> Mat3 {
        Mat3 {
            m: [
                [r0.x, r0.y, r0.z],
                [r1.x, r1.y, r1.z],
                [r2.x, r2.y, r2.z],
            ],
        }
    }

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
        Mat3 {
            m: [
                [c0.x, c1.x, c2.x],
                [c0.y, c1.y, c2.y],
                [c0.z, c1.z, c2.z],
            ],
        }
    }

    pub fn col(&self, j: usize) -> Vec3 {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn row(&self, i: usize) -> Vec3 {
        Vec3::new(self.m[i][0], self.m[i][1], self.m[i][2])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.m;
        Mat3 {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.m[i][k] * o.m[k][j]).sum();
            }
        }
        Mat3 { m: r }
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut r = self.m;
        for row in r.iter_mut() {
            for cell in row.iter_mut() {
                *cell *= s;
            }
        }
        Mat3 { m: r }
    }

    pub fn add_mat(&self, o: &Mat3) -> Mat3 {
        let mut r = self.m;
        for (i, row) in r.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell += o.m[i][j];
            }
        }
        Mat3 { m: r }
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Skew-symmetric cross-product matrix `[v]x` with `[v]x w = v × w`.
    pub fn skew(v: Vec3) -> Mat3 {
        Mat3 {
            m: [
                [0.0, -v.z, v.y],
                [v.z, 0.0, -v.x],
                [-v.y, v.x, 0.0],
            ],
        }
    }

    /// Largest absolute deviation from a perfect rotation (orthonormality
    /// residual plus determinant distance from +1).
    pub fn rotation_residual(&self) -> f64 {
        let rt = self.transpose();
        let should_be_identity = self.mul_mat(&rt);
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((should_be_identity.m[i][j] - target).abs());
            }
        }
        worst.max((self.det() - 1.0).abs())
    }

    /// Geodesic angle in radians between two rotations.
    pub fn geodesic_angle(&self, o: &Mat3) -> f64 {
        let rel = self.transpose().mul_mat(o);
        let trace = rel.m[0][0] + rel.m[1][1] + rel.m[2][2];
        ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

/// Rodrigues formula: `exp([axis_angle]x)`.
pub fn rotation_exp(axis_angle: Vec3) -> Mat3 {
    let theta = axis_angle.norm();
    let k = Mat3::skew(axis_angle);
    let k2 = k.mul_mat(&k);
    // sin(t)/t and (1-cos(t))/t^2 with series fallbacks near zero.
    let (a, b) = if theta < 1e-8 {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (
            theta.sin() / theta,
            (1.0 - theta.cos()) / (theta * theta),
        )
    };
    Mat3::IDENTITY.add_mat(&k.scale(a)).add_mat(&k2.scale(b))
}

/// Right Jacobian of SO(3): `d/da exp([a + da]x) = exp([a]x) · Jr(a) · da`.
pub fn so3_right_jacobian(axis_angle: Vec3) -> Mat3 {
    let theta = axis_angle.norm();
    let k = Mat3::skew(axis_angle);
    let k2 = k.mul_mat(&k);
    let (c1, c2) = if theta < 1e-6 {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        (
            (1.0 - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    };
    Mat3::IDENTITY
        .add_mat(&k.scale(-c1))
        .add_mat(&k2.scale(c2))
}

/// Row-major 4x4 homogeneous matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat4 {
    pub m: [[f64; 4]; 4],
}

impl Mat4 {
    pub const IDENTITY: Mat4 = Mat4 {
        m: [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ],
    };

    pub fn from_rotation_translation(r: &Mat3, t: Vec3) -> Mat4 {
        let mut m = [[0.0; 4]; 4];
        for (row, src) in m.iter_mut().zip(&r.m) {
            row[..3].copy_from_slice(src);
        }
        m[0][3] = t.x;
        m[1][3] = t.y;
        m[2][3] = t.z;
        m[3][3] = 1.0;
        Mat4 { m }
    }

    pub fn rotation(&self) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for (row, src) in r.iter_mut().zip(&self.m) {
            row.copy_from_slice(&src[..3]);
        }
        Mat3 { m: r }
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::new(self.m[0][3], self.m[1][3], self.m[2][3])
    }

    pub fn mul_mat(&self, o: &Mat4) -> Mat4 {
        let mut r = [[0.0; 4]; 4];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..4).map(|k| self.m[i][k] * o.m[k][j]).sum();
            }
        }
        Mat4 { m: r }
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for i in 0..4 {
            out[i * 4..i * 4 + 4].copy_from_slice(&self.m[i]);
        }
        out
    }

    pub fn from_row_major(v: &[f64; 16]) -> Mat4 {
        let mut m = [[0.0; 4]; 4];
        for i in 0..4 {
            m[i].copy_from_slice(&v[i * 4..i * 4 + 4]);
        }
        Mat4 { m }
    }
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as columns), eigenvalues descending.
pub fn symmetric_eigen3(a: &Mat3) -> ([f64; 3], Mat3) {
    let mut a = a.m;
    let mut v = Mat3::IDENTITY.m;
    for _sweep in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off < 1e-30 {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = Mat3::IDENTITY.m;
            rot[p][p] = c;
            rot[q][q] = c;
            rot[p][q] = s;
            rot[q][p] = -s;
            // a = rot^T a rot; v = v rot
            let rot_m = Mat3 { m: rot };
            let a_m = Mat3 { m: a };
            a = rot_m.transpose().mul_mat(&a_m).mul_mat(&rot_m).m;
            let v_m = Mat3 { m: v };
            v = v_m.mul_mat(&rot_m).m;
        }
    }
    let mut pairs: Vec<(f64, Vec3)> = (0..3)
        .map(|j| (a[j][j], Mat3 { m: v }.col(j)))
        .collect();
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
    let vals = [pairs[0].0, pairs[1].0, pairs[2].0];
    let vecs = Mat3::from_cols(pairs[0].1, pairs[1].1, pairs[2].1);
    (vals, vecs)
}

/// SVD of a general 3x3 matrix, `a = u * diag(s) * v^T` with `s` descending
/// and nonnegative. Built from the eigen-decomposition of `a^T a`; the left
/// singular vectors for (near-)zero singular values are completed by cross
/// products so `u` is always a proper basis.
pub fn svd3(a: &Mat3) -> (Mat3, [f64; 3], Mat3) {
    let ata = a.transpose().mul_mat(a);
    let (vals, v) = symmetric_eigen3(&ata);
    let s: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let mut u_cols = [Vec3::ZERO; 3];
    // eigenvalues carry ~1e-15 relative noise, so singular values (their
    // square roots) are only trustworthy down to ~1e-7 of the largest
    let tol = s[0].max(1e-300) * 1e-7;
    for j in 0..3 {
        if s[j] > tol {
            u_cols[j] = a.mul_vec(v.col(j)) / s[j];
        }
    }
    if s[1] <= tol {
        // rank <= 1: build any orthonormal completion of u0
        let u0 = if s[0] > tol {
            u_cols[0]
        } else {
            Vec3::new(1.0, 0.0, 0.0)
        };
        let helper = if u0.x.abs() < 0.9 {
            Vec3::new(1.0, 0.0, 0.0)
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        u_cols[0] = u0;
        u_cols[1] = u0.cross(helper).normalized();
    }
    if s[2] <= tol {
        u_cols[2] = u_cols[0].cross(u_cols[1]);
    }
    let u = Mat3::from_cols(u_cols[0], u_cols[1], u_cols[2]);
    (u, [s[0], s[1], s[2]], v)
}
