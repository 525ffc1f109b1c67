use serde::{Deserialize, Serialize};

/// One rigid link of the walker. The walker moves in the x-z plane and every
/// hinge turns about the world y axis; `pivot[1]` only offsets the link
/// sideways for bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub name: String,
    /// Parent body index; `None` only for the floating base (body 0).
    pub parent: Option<usize>,
    /// Joint pivot in the parent frame `(x, y, z)`.
    pub pivot: [f64; 3],
    /// Centre of mass in the link frame `(x, z)`.
    pub com: [f64; 2],
    pub mass: f64,
    /// Rotational inertia about the y axis through the centre of mass.
    pub inertia: f64,
    /// Ground contact points in the link frame `(x, z)`.
    pub contacts: Vec<[f64; 2]>,
    /// Joint target limits (rad); ignored for the base.
    pub limits: [f64; 2],
    pub kp: f64,
    pub kd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Morphology {
    pub links: Vec<LinkSpec>,
    pub foot_links: Vec<usize>,
    /// Reflected rotor inertia added to every joint (kg m²).
    pub armature: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MorphologyError {
    #[error("morphology needs a base and at least one link")]
    TooFewLinks,
    #[error("link {0}: parent must precede the link (base has none)")]
    BadParent(usize),
    #[error("link {0}: mass and inertia must be positive")]
    BadMass(usize),
    #[error("link {0}: joint limits inverted")]
    BadLimits(usize),
    #[error("foot link {0} out of range")]
    BadFoot(usize),
}

impl Morphology {
    pub fn n_body(&self) -> usize {
        self.links.len()
    }

    pub fn n_joint(&self) -> usize {
        self.links.len() - 1
    }

    pub fn validate(&self) -> Result<(), MorphologyError> {
        if self.links.len() < 2 {
            return Err(MorphologyError::TooFewLinks);
        }
        for (i, l) in self.links.iter().enumerate() {
            match (i, l.parent) {
                (0, None) => {}
                (0, Some(_)) | (_, None) => return Err(MorphologyError::BadParent(i)),
                (_, Some(p)) if p >= i => return Err(MorphologyError::BadParent(i)),
                _ => {}
            }
            if !(l.mass > 0.0 && l.inertia > 0.0) {
                return Err(MorphologyError::BadMass(i));
            }
            if i > 0 && l.limits[0] > l.limits[1] {
                return Err(MorphologyError::BadLimits(i));
            }
        }
        if let Some(&f) = self.foot_links.iter().find(|&&f| f >= self.links.len()) {
            return Err(MorphologyError::BadFoot(f));
        }
        Ok(())
    }

    /// Base plus two legs of thigh, shank and foot: seven bodies, six hinges.
    pub fn biped() -> Self {
        let base = LinkSpec {
            name: "base".into(),
            parent: None,
            pivot: [0.0; 3],
            com: [0.0, 0.0],
            mass: 6.0,
            inertia: 0.065,
            contacts: vec![[0.0, 0.0]],
            limits: [0.0, 0.0],
            kp: 0.0,
            kd: 0.0,
        };
        let mut links = vec![base];
        for (side, y) in [("left", 0.1), ("right", -0.1)] {
            let thigh = links.len();
            links.push(LinkSpec {
                name: format!("{side}_thigh"),
                parent: Some(0),
                pivot: [0.0, y, -0.1],
                com: [0.0, -0.2],
                mass: 1.2,
                inertia: 0.016,
                contacts: vec![[0.0, 0.0]],
                limits: [-1.5, 1.0],
                kp: 300.0,
                kd: 6.0,
            });
            links.push(LinkSpec {
                name: format!("{side}_shank"),
                parent: Some(thigh),
                pivot: [0.0, 0.0, -0.4],
                com: [0.0, -0.2],
                mass: 1.0,
                inertia: 0.0133,
                contacts: vec![[0.0, 0.0]],
                limits: [-0.1, 2.2],
                kp: 300.0,
                kd: 6.0,
            });
            links.push(LinkSpec {
                name: format!("{side}_foot"),
                parent: Some(thigh + 1),
                pivot: [0.0, 0.0, -0.4],
                com: [0.035, -0.03],
                mass: 0.4,
                inertia: 0.0011,
                contacts: vec![[-0.12, -0.05], [0.15, -0.05]],
                limits: [-0.8, 0.8],
                kp: 150.0,
                kd: 3.0,
            });
        }
        Self {
            links,
            foot_links: vec![3, 6],
            armature: 0.02,
        }
    }

    /// Base height at which the default biped stands on flat ground with
    /// straight legs and zero penetration.
    pub fn standing_height(&self) -> f64 {
        // walk down the first leg: pivots plus the lowest contact of the foot
        let mut z = 0.0;
        let mut i = 1;
        loop {
            z += self.links[i].pivot[2];
            let next = self.links.iter().position(|l| l.parent == Some(i));
            match next {
                Some(n) => i = n,
                None => break,
            }
        }
        let lowest = self.links[i]
            .contacts
            .iter()
            .map(|c| c[1])
            .fold(0.0, f64::min);
        -(z + lowest)
    }
}

impl Default for Morphology {
    fn default() -> Self {
        Self::biped()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn biped_is_valid() {
        let m = Morphology::biped();
        m.validate().unwrap();
        assert_eq!(m.n_body(), 7);
        assert_eq!(m.n_joint(), 6);
        assert!((m.standing_height() - 0.95).abs() < 1e-12);
    }

    #[test]
    fn rejects_forward_parent() {
        let mut m = Morphology::biped();
        m.links[2].parent = Some(5);
        assert_eq!(m.validate(), Err(MorphologyError::BadParent(2)));
    }
}
