//! Reduced-coordinate planar dynamics of the chain walker.
//!
//! Generalized coordinates are `[x, z, pitch, q_0 .. q_{n-1}]`. The mass
//! matrix is assembled from point Jacobians of each centre of mass and the
//! velocity-product terms from the recursive centripetal accelerations, which
//! is exact for planar chains.

use nalgebra::{DMatrix, DVector};

use super::morphology::Morphology;
use super::randomization::EnvRandomization;
use super::state::{BodyState, RobotState};
use super::SimConfig;

pub(crate) type V2 = [f64; 2];

fn rot(phi: f64, r: V2) -> V2 {
    let (s, c) = phi.sin_cos();
    [r[0] * c + r[1] * s, -r[0] * s + r[1] * c]
}

/// d/dφ of `rot(φ, r_local)` expressed through the world vector `r`.
fn perp(r: V2) -> V2 {
    [r[1], -r[0]]
}

fn sub(a: V2, b: V2) -> V2 {
    [a[0] - b[0], a[1] - b[1]]
}

/// Forward kinematics of the generalized configuration.
pub(crate) struct Kinematics {
    pub angle: Vec<f64>,
    pub rate: Vec<f64>,
    pub origin: Vec<V2>,
    pub lateral: Vec<f64>,
    /// Generalized-coordinate indices that rotate each body (θ plus joints on the path).
    pub path: Vec<Vec<usize>>,
    /// Velocity-product acceleration of each body origin.
    pub origin_bias: Vec<V2>,
}

impl Kinematics {
    pub fn new(m: &Morphology, q: &[f64], qd: &[f64]) -> Self {
        let n = m.n_body();
        let mut angle = vec![0.0; n];
        let mut rate = vec![0.0; n];
        let mut origin = vec![[0.0; 2]; n];
        let mut lateral = vec![0.0; n];
        let mut path: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut origin_bias = vec![[0.0; 2]; n];
        angle[0] = q[2];
        rate[0] = qd[2];
        origin[0] = [q[0], q[1]];
        path[0] = vec![2];
        for i in 1..n {
            let link = &m.links[i];
            let p = link.parent.expect("validated morphology");
            let coord = 3 + (i - 1);
            angle[i] = angle[p] + q[coord];
            rate[i] = rate[p] + qd[coord];
            let r = rot(angle[p], [link.pivot[0], link.pivot[2]]);
            origin[i] = [origin[p][0] + r[0], origin[p][1] + r[1]];
            lateral[i] = lateral[p] + link.pivot[1];
            let mut pp = path[p].clone();
            pp.push(coord);
            path[i] = pp;
            let w2 = rate[p] * rate[p];
            origin_bias[i] = [origin_bias[p][0] - w2 * r[0], origin_bias[p][1] - w2 * r[1]];
        }
        Self {
            angle,
            rate,
            origin,
            lateral,
            path,
            origin_bias,
        }
    }

    /// World position of a point given in the frame of body `i`.
    pub fn point(&self, i: usize, local: V2) -> V2 {
        let r = rot(self.angle[i], local);
        [self.origin[i][0] + r[0], self.origin[i][1] + r[1]]
    }

    /// Pivot of the coordinate `coord` (θ pivots about the base origin).
    fn pivot_of(&self, coord: usize) -> V2 {
        if coord == 2 {
            self.origin[0]
        } else {
            self.origin[coord - 2]
        }
    }

    /// Columns of the `2 x n` point Jacobian, written into `jx`, `jz`.
    pub fn point_jacobian(&self, i: usize, p: V2, jx: &mut [f64], jz: &mut [f64]) {
        jx.iter_mut().for_each(|v| *v = 0.0);
        jz.iter_mut().for_each(|v| *v = 0.0);
        jx[0] = 1.0;
        jz[1] = 1.0;
        for &c in &self.path[i] {
            let d = perp(sub(p, self.pivot_of(c)));
            jx[c] = d[0];
            jz[c] = d[1];
        }
    }

    pub fn point_bias(&self, i: usize, p: V2) -> V2 {
        let w2 = self.rate[i] * self.rate[i];
        let r = sub(p, self.origin[i]);
        [
            self.origin_bias[i][0] - w2 * r[0],
            self.origin_bias[i][1] - w2 * r[1],
        ]
    }
}

pub(crate) fn generalized_from_state(state: &RobotState) -> (Vec<f64>, Vec<f64>) {
    let b = &state.bodies[0];
    let [w, x, y, z] = b.q;
    // R[0][2] and R[0][0] of the base rotation give the pitch about +y
    let r02 = 2.0 * (x * z + w * y);
    let r00 = 1.0 - 2.0 * (y * y + z * z);
    let pitch = r02.atan2(r00);
    let mut q = vec![b.p[0], b.p[2], pitch];
    q.extend_from_slice(&state.joint_q);
    let mut qd = vec![b.v[0], b.v[2], b.w[1]];
    qd.extend_from_slice(&state.joint_dq);
    (q, qd)
}

pub(crate) fn state_from_generalized(
    m: &Morphology,
    q: &[f64],
    qd: &[f64],
    base_y: f64,
) -> RobotState {
    let kin = Kinematics::new(m, q, qd);
    let n = m.n_body();
    let mut jx = vec![0.0; q.len()];
    let mut jz = vec![0.0; q.len()];
    let bodies = (0..n)
        .map(|i| {
            let o = kin.origin[i];
            kin.point_jacobian(i, o, &mut jx, &mut jz);
            let vx: f64 = jx.iter().zip(qd).map(|(a, b)| a * b).sum();
            let vz: f64 = jz.iter().zip(qd).map(|(a, b)| a * b).sum();
            let (s, c) = (kin.angle[i] * 0.5).sin_cos();
            BodyState {
                p: [o[0], base_y + kin.lateral[i], o[1]],
                q: [c, 0.0, s, 0.0],
                v: [vx, 0.0, vz],
                w: [0.0, kin.rate[i], 0.0],
            }
        })
        .collect();
    RobotState {
        bodies,
        joint_q: q[3..].to_vec(),
        joint_dq: qd[3..].to_vec(),
        foot_links: m.foot_links.clone(),
    }
}

/// Builds a state from base pose and joint angles by forward kinematics.
pub fn pose_state(
    m: &Morphology,
    base: [f64; 3],
    pitch: f64,
    joint_q: &[f64],
    base_vel: [f64; 3],
    pitch_rate: f64,
    joint_dq: &[f64],
) -> RobotState {
    let mut q = vec![base[0], base[2], pitch];
    q.extend_from_slice(joint_q);
    let mut qd = vec![base_vel[0], base_vel[2], pitch_rate];
    qd.extend_from_slice(joint_dq);
    state_from_generalized(m, &q, &qd, base[1])
}

/// Explicit PD law for one joint.
pub fn pd_torque(kp: f64, kd: f64, kp_scale: f64, kd_scale: f64, target: f64, q: f64, dq: f64) -> f64 {
    kp * kp_scale * (target - q) - kd * kd_scale * dq
}

struct Contact {
    jn: Vec<f64>,
    jt: Vec<f64>,
    penetration: f64,
    normal_on: bool,
    /// `Some(force)` once the tangential force saturates at the friction cone.
    sliding: Option<f64>,
}

/// One semi-implicit Euler substep in place.
pub(crate) fn substep(
    cfg: &SimConfig,
    rand: &EnvRandomization,
    targets: &[f64],
    q: &mut [f64],
    qd: &mut [f64],
) {
    let m = &cfg.morphology;
    let n = q.len();
    let dt = cfg.substep_dt();
    let kin = Kinematics::new(m, q, qd);

    let mut mass = DMatrix::<f64>::zeros(n, n);
    let mut force = DVector::<f64>::zeros(n);
    let mut jx = vec![0.0; n];
    let mut jz = vec![0.0; n];
    for (i, link) in m.links.iter().enumerate() {
        let body_mass = if i == 0 {
            link.mass + rand.payload
        } else {
            link.mass
        };
        let com = kin.point(i, link.com);
        kin.point_jacobian(i, com, &mut jx, &mut jz);
        let bias = kin.point_bias(i, com);
        for a in 0..n {
            if jx[a] == 0.0 && jz[a] == 0.0 {
                continue;
            }
            for b in 0..n {
                mass[(a, b)] += body_mass * (jx[a] * jx[b] + jz[a] * jz[b]);
            }
            force[a] += -body_mass * cfg.gravity * jz[a]
                - body_mass * (jx[a] * bias[0] + jz[a] * bias[1]);
        }
        for &a in &kin.path[i] {
            for &b in &kin.path[i] {
                mass[(a, b)] += link.inertia;
            }
        }
    }
    for j in 0..m.n_joint() {
        let link = &m.links[j + 1];
        let c = 3 + j;
        mass[(c, c)] += m.armature;
        force[c] += pd_torque(
            link.kp,
            link.kd,
            rand.kp_scale,
            rand.kd_scale,
            targets[j],
            q[c],
            qd[c],
        );
    }

    let mut contacts = Vec::new();
    if cfg.contact_enabled {
        for (i, link) in m.links.iter().enumerate() {
            for &local in &link.contacts {
                let p = kin.point(i, local);
                if p[1] < 0.0 {
                    let mut jt = vec![0.0; n];
                    let mut jn = vec![0.0; n];
                    kin.point_jacobian(i, p, &mut jt, &mut jn);
                    contacts.push(Contact {
                        jn,
                        jt,
                        penetration: -p[1],
                        normal_on: true,
                        sliding: None,
                    });
                }
            }
        }
    }

    let qd0 = DVector::from_column_slice(qd);
    let momentum = &mass * &qd0;
    let mut solution = qd0.clone();
    for _ in 0..6 {
        let mut a = mass.clone();
        let mut rhs = &momentum + &force * dt;
        for c in contacts.iter().filter(|c| c.normal_on) {
            let spring = cfg.contact_stiffness * c.penetration;
            for r in 0..n {
                rhs[r] += dt * c.jn[r] * spring;
                for s in 0..n {
                    a[(r, s)] += dt * cfg.contact_damping * c.jn[r] * c.jn[s];
                }
            }
            match c.sliding {
                Some(ft) => {
                    for r in 0..n {
                        rhs[r] += dt * c.jt[r] * ft;
                    }
                }
                None => {
                    for r in 0..n {
                        for s in 0..n {
                            a[(r, s)] += dt * cfg.tangential_damping * c.jt[r] * c.jt[s];
                        }
                    }
                }
            }
        }
        solution = match a.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => a.lu().solve(&rhs).unwrap_or_else(|| qd0.clone()),
        };
        let mut changed = false;
        for c in contacts.iter_mut().filter(|c| c.normal_on) {
            let vn: f64 = c.jn.iter().zip(solution.iter()).map(|(a, b)| a * b).sum();
            let fn_ = cfg.contact_stiffness * c.penetration - cfg.contact_damping * vn;
            if fn_ < 0.0 {
                c.normal_on = false;
                c.sliding = None;
                changed = true;
                continue;
            }
            let limit = rand.friction * fn_;
            let vt: f64 = c.jt.iter().zip(solution.iter()).map(|(a, b)| a * b).sum();
            match c.sliding {
                None => {
                    let ft = -cfg.tangential_damping * vt;
                    if ft.abs() > limit {
                        c.sliding = Some(ft.signum() * limit);
                        changed = true;
                    }
                }
                Some(prev) => {
                    let ft = prev.signum() * limit;
                    if (ft - prev).abs() > 1e-12 * limit.max(1.0) {
                        c.sliding = Some(ft);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }

    for k in 0..n {
        qd[k] = solution[k];
        q[k] += dt * qd[k];
    }
}
