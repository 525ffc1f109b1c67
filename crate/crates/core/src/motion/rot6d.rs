//! Continuous 6-D rotation encoding: the first two columns of the rotation
//! matrix, decoded by Gram-Schmidt plus a cross product.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("6-D rotation has a zero or parallel column pair")]
pub struct DegenerateRotation;

pub fn unit_quat(q: [f64; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
}

pub fn quat_array(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// `[c0x, c0y, c0z, c1x, c1y, c1z]` of the rotation matrix of `q` (`[w, x, y, z]`).
pub fn rot6d_encode(q: [f64; 4]) -> [f64; 6] {
    let m = unit_quat(q).to_rotation_matrix();
    let m = m.matrix();
    [
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]
}

/// Orthonormalized column pair of a 6-D vector.
pub fn rot6d_columns(r: &[f64; 6]) -> Result<(Vector3<f64>, Vector3<f64>), DegenerateRotation> {
    let a1 = Vector3::new(r[0], r[1], r[2]);
    let a2 = Vector3::new(r[3], r[4], r[5]);
    let n1 = a1.norm();
    if !(n1 > 1e-12) {
        return Err(DegenerateRotation);
    }
    let b1 = a1 / n1;
    let u = a2 - b1 * b1.dot(&a2);
    let n2 = u.norm();
    if !(n2 > 1e-12 * n1.max(1.0)) {
        return Err(DegenerateRotation);
    }
    Ok((b1, u / n2))
}

/// Inverse of [`rot6d_encode`] up to quaternion sign, valid for any
/// non-degenerate input.
pub fn rot6d_decode(r: &[f64; 6]) -> Result<[f64; 4], DegenerateRotation> {
    let (b1, b2) = rot6d_columns(r)?;
    let b3 = b1.cross(&b2);
    let m = Matrix3::from_columns(&[b1, b2, b3]);
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
    Ok(quat_array(&q))
}

/// Geodesic angle between two rotations (rad).
pub fn angle_between(a: [f64; 4], b: [f64; 4]) -> f64 {
    unit_quat(a).angle_to(&unit_quat(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_encoding() {
        assert_eq!(rot6d_encode([1.0, 0.0, 0.0, 0.0]), [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn decode_orthogonalizes_second_column() {
        let (b1, b2) = rot6d_columns(&[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(b1, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(b2, Vector3::new(0.0, 1.0, 0.0));
        let q = rot6d_decode(&[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(angle_between(q, [1.0, 0.0, 0.0, 0.0]) < 1e-12);
    }

    #[test]
    fn degenerate_columns_are_rejected() {
        assert_eq!(rot6d_decode(&[0.0; 6]), Err(DegenerateRotation));
        assert_eq!(
            rot6d_decode(&[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]),
            Err(DegenerateRotation)
        );
    }

    fn any_quat() -> impl Strategy<Value = [f64; 4]> {
        (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
            .prop_filter("non-zero", |(a, b, c, d)| a * a + b * b + c * c + d * d > 1e-3)
            .prop_map(|(a, b, c, d)| quat_array(&unit_quat([a, b, c, d])))
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(q in any_quat()) {
            let back = rot6d_decode(&rot6d_encode(q)).unwrap();
            prop_assert!(angle_between(q, back) < 1e-6);
        }

        #[test]
        fn decode_is_always_a_rotation(r in proptest::array::uniform6(-2.0f64..2.0)) {
            if let Ok(q) = rot6d_decode(&r) {
                let n: f64 = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((n - 1.0).abs() < 1e-9);
                let m = unit_quat(q).to_rotation_matrix();
                prop_assert!((m.matrix().determinant() - 1.0).abs() < 1e-9);
            }
        }
    }
}
