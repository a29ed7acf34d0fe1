//! Part hierarchy: joints, compositional parts and the tree that connects them.

use serde::{Deserialize, Serialize};

use crate::error::{PoseError, Result};

pub const NUM_JOINTS: usize = 14;

/// Canonical joint ordering used by annotations, the synthetic generator and
/// the evaluator.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "head_top",
    "neck",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
];

pub mod joint {
    pub const HEAD_TOP: usize = 0;
    pub const NECK: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_WRIST: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const R_HIP: usize = 8;
    pub const R_KNEE: usize = 9;
    pub const R_ANKLE: usize = 10;
    pub const L_HIP: usize = 11;
    pub const L_KNEE: usize = 12;
    pub const L_ANKLE: usize = 13;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    High,
    Mid,
    Joint,
}

impl Level {
    /// High and mid-level compositional parts count as "large".
    pub fn is_large(self) -> bool {
        !matches!(self, Level::Joint)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Level::High => 0,
            Level::Mid => 1,
            Level::Joint => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Level> {
        match code {
            0 => Some(Level::High),
            1 => Some(Level::Mid),
            2 => Some(Level::Joint),
            _ => None,
        }
    }
}

/// Box extent in feature cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxSize {
    pub width: usize,
    pub height: usize,
}

impl BoxSize {
    pub const fn new(width: usize, height: usize) -> Self {
        BoxSize { width, height }
    }

    pub fn area(self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartDef {
    pub id: usize,
    pub name: String,
    pub level: Level,
    pub box_size: BoxSize,
    pub joints: Vec<usize>,
}

/// A rooted tree over parts. Edge `e` always connects `parent_of(child)` to
/// `child`, and is addressed by the child's part id.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTree {
    parts: Vec<PartDef>,
    edges: Vec<(usize, usize)>,
    root: usize,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    preorder: Vec<usize>,
}

impl SkeletonTree {
    pub fn new(parts: Vec<PartDef>, edges: Vec<(usize, usize)>, root: usize) -> Result<Self> {
        let n = parts.len();
        if n == 0 {
            return Err(PoseError::InvalidTree("no parts".into()));
        }
        for (i, p) in parts.iter().enumerate() {
            if p.id != i {
                return Err(PoseError::InvalidTree(format!(
                    "part ids must be 0..n in order, found {} at {i}",
                    p.id
                )));
            }
            if p.box_size.width == 0 || p.box_size.height == 0 {
                return Err(PoseError::InvalidTree(format!("part {i} has an empty box")));
            }
            if p.level == Level::Joint && p.joints.len() != 1 {
                return Err(PoseError::InvalidTree(format!(
                    "joint part {i} must have exactly one joint"
                )));
            }
            if p.joints.is_empty() || p.joints.iter().any(|&j| j >= NUM_JOINTS) {
                return Err(PoseError::InvalidTree(format!("part {i} has bad joints")));
            }
        }
        if root >= n {
            return Err(PoseError::InvalidTree(format!("root {root} out of range")));
        }
        if edges.len() + 1 != n {
            return Err(PoseError::InvalidTree(format!(
                "{} edges for {n} parts",
                edges.len()
            )));
        }
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        for &(p, c) in &edges {
            if p >= n || c >= n || p == c {
                return Err(PoseError::InvalidTree(format!("bad edge ({p}, {c})")));
            }
            if c == root || parent[c].is_some() {
                return Err(PoseError::InvalidTree(format!("part {c} has two parents")));
            }
            parent[c] = Some(p);
            children[p].push(c);
        }
        let mut preorder = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            if seen[v] {
                return Err(PoseError::InvalidTree("cycle".into()));
            }
            seen[v] = true;
            preorder.push(v);
            stack.extend(children[v].iter().rev());
        }
        if preorder.len() != n {
            return Err(PoseError::InvalidTree("graph is not connected".into()));
        }
        Ok(SkeletonTree {
            parts,
            edges,
            root,
            parent,
            children,
            preorder,
        })
    }

    /// The default 25-node hierarchy: upper body (root) and lower body, nine
    /// mid-level limb/head parts, fourteen joints.
    pub fn default_human() -> Self {
        use joint::*;
        let high = BoxSize::new(9, 12);
        let mid = BoxSize::new(6, 9);
        let small = BoxSize::new(5, 5);
        let mut parts = Vec::new();
        let mut add = |name: &str, level, box_size, joints: &[usize]| {
            let id = parts.len();
            parts.push(PartDef {
                id,
                name: name.to_string(),
                level,
                box_size,
                joints: joints.to_vec(),
            });
            id
        };
        let upper = add(
            "upper_body",
            Level::High,
            high,
            &[NECK, R_SHOULDER, L_SHOULDER, R_HIP, L_HIP],
        );
        let lower = add(
            "lower_body",
            Level::High,
            high,
            &[R_HIP, L_HIP, R_KNEE, L_KNEE, R_ANKLE, L_ANKLE],
        );
        let head = add("head", Level::Mid, mid, &[HEAD_TOP, NECK]);
        let rua = add("r_upper_arm", Level::Mid, mid, &[R_SHOULDER, R_ELBOW]);
        let rla = add("r_lower_arm", Level::Mid, mid, &[R_ELBOW, R_WRIST]);
        let lua = add("l_upper_arm", Level::Mid, mid, &[L_SHOULDER, L_ELBOW]);
        let lla = add("l_lower_arm", Level::Mid, mid, &[L_ELBOW, L_WRIST]);
        let rul = add("r_upper_leg", Level::Mid, mid, &[R_HIP, R_KNEE]);
        let rll = add("r_lower_leg", Level::Mid, mid, &[R_KNEE, R_ANKLE]);
        let lul = add("l_upper_leg", Level::Mid, mid, &[L_HIP, L_KNEE]);
        let lll = add("l_lower_leg", Level::Mid, mid, &[L_KNEE, L_ANKLE]);
        let joint_parts: Vec<usize> = (0..NUM_JOINTS)
            .map(|j| add(JOINT_NAMES[j], Level::Joint, small, &[j]))
            .collect();
        let jp = |j: usize| joint_parts[j];
        let edges = vec![
            (upper, lower),
            (upper, head),
            (upper, rua),
            (upper, lua),
            (rua, rla),
            (lua, lla),
            (lower, rul),
            (lower, lul),
            (rul, rll),
            (lul, lll),
            (head, jp(HEAD_TOP)),
            (head, jp(NECK)),
            (rua, jp(R_SHOULDER)),
            (rla, jp(R_ELBOW)),
            (rla, jp(R_WRIST)),
            (lua, jp(L_SHOULDER)),
            (lla, jp(L_ELBOW)),
            (lla, jp(L_WRIST)),
            (rul, jp(R_HIP)),
            (rll, jp(R_KNEE)),
            (rll, jp(R_ANKLE)),
            (lul, jp(L_HIP)),
            (lll, jp(L_KNEE)),
            (lll, jp(L_ANKLE)),
        ];
        SkeletonTree::new(parts, edges, upper).expect("default tree is valid")
    }

    pub fn parts(&self) -> &[PartDef] {
        &self.parts
    }

    pub fn part(&self, id: usize) -> &PartDef {
        &self.parts[id]
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, part: usize) -> Option<usize> {
        self.parent[part]
    }

    pub fn children(&self, part: usize) -> &[usize] {
        &self.children[part]
    }

    /// Parents before children.
    pub fn preorder(&self) -> &[usize] {
        &self.preorder
    }

    /// Children before parents.
    pub fn postorder(&self) -> impl Iterator<Item = usize> + '_ {
        self.preorder.iter().rev().copied()
    }

    /// Part id whose location is the given joint, if the tree has one.
    pub fn joint_part(&self, joint: usize) -> Option<usize> {
        self.parts
            .iter()
            .find(|p| p.level == Level::Joint && p.joints[0] == joint)
            .map(|p| p.id)
    }

    pub fn part_by_name(&self, name: &str) -> Option<usize> {
        self.parts.iter().position(|p| p.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointAnnotation {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub image_id: String,
    pub joints: Vec<JointAnnotation>,
    /// Person height in pixels.
    pub scale: f64,
}

impl Annotation {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.joints.len() != NUM_JOINTS {
            return Err(PoseError::InvalidArgument(format!(
                "annotation {} has {} joints, expected {NUM_JOINTS}",
                self.image_id,
                self.joints.len()
            )));
        }
        for (j, p) in self.joints.iter().enumerate() {
            let inside = p.x.is_finite()
                && p.y.is_finite()
                && p.x >= 0.0
                && p.y >= 0.0
                && p.x <= (width as f64 - 1.0)
                && p.y <= (height as f64 - 1.0);
            if !inside {
                return Err(PoseError::InvalidArgument(format!(
                    "annotation {}: joint {} at ({}, {}) outside {width}x{height}",
                    self.image_id, JOINT_NAMES[j], p.x, p.y
                )));
            }
        }
        Ok(())
    }
}

/// Pixel location of every part: joints map to themselves, compositional
/// parts to the centroid of their joints. `None` marks a part with an
/// invisible or missing constituent joint.
pub fn derive_part_instances(
    annotation: &Annotation,
    tree: &SkeletonTree,
) -> Vec<Option<[f64; 2]>> {
    tree.parts()
        .iter()
        .map(|part| {
            let mut sum = [0.0, 0.0];
            for &j in &part.joints {
                let p = annotation.joints.get(j).filter(|p| p.visible)?;
                sum[0] += p.x;
                sum[1] += p.y;
            }
            let n = part.joints.len() as f64;
            Some([sum[0] / n, sum[1] / n])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(points: &[(f64, f64)]) -> Annotation {
        let mut joints = vec![
            JointAnnotation {
                x: 0.0,
                y: 0.0,
                visible: true
            };
            NUM_JOINTS
        ];
        for (j, &(x, y)) in points.iter().enumerate() {
            joints[j] = JointAnnotation {
                x,
                y,
                visible: true,
            };
        }
        Annotation {
            image_id: "a".into(),
            joints,
            scale: 150.0,
        }
    }

    #[test]
    fn default_tree_shape() {
        let t = SkeletonTree::default_human();
        assert_eq!(t.len(), 25);
        assert_eq!(t.edges().len(), 24);
        assert_eq!(
            t.parts().iter().filter(|p| p.level == Level::High).count(),
            2
        );
        assert_eq!(
            t.parts().iter().filter(|p| p.level == Level::Mid).count(),
            9
        );
        assert_eq!(
            t.parts().iter().filter(|p| p.level == Level::Joint).count(),
            14
        );
        assert_eq!(t.part(t.root()).name, "upper_body");
        assert!(t.parent(t.root()).is_none());
        let mut seen = vec![0; t.len()];
        for &p in t.preorder() {
            seen[p] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
        for j in 0..NUM_JOINTS {
            assert!(t.joint_part(j).is_some());
        }
    }

    #[test]
    fn rejects_cycles_and_forests() {
        let part = |id| PartDef {
            id,
            name: format!("p{id}"),
            level: Level::Mid,
            box_size: BoxSize::new(2, 2),
            joints: vec![0],
        };
        let parts: Vec<_> = (0..3).map(part).collect();
        assert!(SkeletonTree::new(parts.clone(), vec![(0, 1), (1, 0)], 0).is_err());
        assert!(SkeletonTree::new(parts.clone(), vec![(0, 1)], 0).is_err());
        assert!(SkeletonTree::new(parts.clone(), vec![(1, 2), (2, 1)], 0).is_err());
        assert!(SkeletonTree::new(parts, vec![(0, 1), (0, 2)], 0).is_ok());
    }

    #[test]
    fn centroid_of_two_joints() {
        let t = SkeletonTree::default_human();
        let mut a = ann(&[]);
        a.joints[joint::R_KNEE] = JointAnnotation {
            x: 0.0,
            y: 0.0,
            visible: true,
        };
        a.joints[joint::R_ANKLE] = JointAnnotation {
            x: 10.0,
            y: 0.0,
            visible: true,
        };
        let locs = derive_part_instances(&a, &t);
        let leg = t.part_by_name("r_lower_leg").unwrap();
        assert_eq!(locs[leg], Some([5.0, 0.0]));
    }

    #[test]
    fn joint_part_is_identity() {
        let t = SkeletonTree::default_human();
        let mut a = ann(&[]);
        a.joints[joint::L_WRIST] = JointAnnotation {
            x: 3.0,
            y: 7.0,
            visible: true,
        };
        let locs = derive_part_instances(&a, &t);
        assert_eq!(
            locs[t.joint_part(joint::L_WRIST).unwrap()],
            Some([3.0, 7.0])
        );
    }

    #[test]
    fn invisible_joint_flags_part_absent() {
        let t = SkeletonTree::default_human();
        let mut a = ann(&[]);
        a.joints[joint::R_ELBOW].visible = false;
        let locs = derive_part_instances(&a, &t);
        assert!(locs[t.part_by_name("r_upper_arm").unwrap()].is_none());
        assert!(locs[t.part_by_name("r_lower_arm").unwrap()].is_none());
        assert!(locs[t.joint_part(joint::R_ELBOW).unwrap()].is_none());
        assert!(locs[t.part_by_name("head").unwrap()].is_some());
    }
}
