//! Percentage of correctly localized parts (PCP).
//!
//! Ten segments are scored per person: torso (neck to pelvis, the pelvis
//! being the midpoint of the hips), head (head top to neck), and the two
//! upper arms, lower arms, upper legs and lower legs. Left and right are
//! merged into one column each. Endpoints are matched in the listed order.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{PoseError, Result};
use crate::features::cell_center;
use crate::model::ParseResult;
use crate::skeleton::{joint, Annotation, SkeletonTree, NUM_JOINTS};

pub const DEFAULT_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    pub fn new(a: [f64; 2], b: [f64; 2]) -> Self {
        Segment { a, b }
    }

    pub fn length(&self) -> f64 {
        dist(self.a, self.b)
    }
}

fn dist(p: [f64; 2], q: [f64; 2]) -> f64 {
    (p[0] - q[0]).hypot(p[1] - q[1])
}

/// Both predicted endpoints lie within `fraction` of the true segment length
/// of the matching true endpoints.
pub fn pcp_correct(predicted: &Segment, truth: &Segment, fraction: f64) -> Result<bool> {
    let len = truth.length();
    if len.is_nan() || len <= 0.0 {
        return Err(PoseError::InvalidArgument(
            "ground-truth segment has zero length".into(),
        ));
    }
    let tol = fraction * len;
    Ok(dist(predicted.a, truth.a) <= tol && dist(predicted.b, truth.b) <= tol)
}

/// Table columns, in display order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SegmentKind {
    Torso,
    Head,
    UpperLeg,
    LowerLeg,
    UpperArm,
    LowerArm,
}

impl SegmentKind {
    pub const ALL: [SegmentKind; 6] = [
        SegmentKind::Torso,
        SegmentKind::Head,
        SegmentKind::UpperLeg,
        SegmentKind::LowerLeg,
        SegmentKind::UpperArm,
        SegmentKind::LowerArm,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SegmentKind::Torso => "Torso",
            SegmentKind::Head => "Head",
            SegmentKind::UpperLeg => "Upper Leg",
            SegmentKind::LowerLeg => "Lower Leg",
            SegmentKind::UpperArm => "U.Arm",
            SegmentKind::LowerArm => "L.Arm",
        }
    }
}

/// Endpoint joints of the ten segments; `PELVIS` stands for the hip midpoint.
const PELVIS: usize = usize::MAX;
const SEGMENTS: [(SegmentKind, usize, usize); 10] = [
    (SegmentKind::Torso, joint::NECK, PELVIS),
    (SegmentKind::Head, joint::HEAD_TOP, joint::NECK),
    (SegmentKind::UpperLeg, joint::R_HIP, joint::R_KNEE),
    (SegmentKind::UpperLeg, joint::L_HIP, joint::L_KNEE),
    (SegmentKind::LowerLeg, joint::R_KNEE, joint::R_ANKLE),
    (SegmentKind::LowerLeg, joint::L_KNEE, joint::L_ANKLE),
    (SegmentKind::UpperArm, joint::R_SHOULDER, joint::R_ELBOW),
    (SegmentKind::UpperArm, joint::L_SHOULDER, joint::L_ELBOW),
    (SegmentKind::LowerArm, joint::R_ELBOW, joint::R_WRIST),
    (SegmentKind::LowerArm, joint::L_ELBOW, joint::L_WRIST),
];

fn endpoint(joints: &[[f64; 2]], j: usize) -> [f64; 2] {
    if j == PELVIS {
        let (r, l) = (joints[joint::R_HIP], joints[joint::L_HIP]);
        [(r[0] + l[0]) / 2.0, (r[1] + l[1]) / 2.0]
    } else {
        joints[j]
    }
}

/// The ten evaluated segments of a 14-joint pose.
pub fn segments(joints: &[[f64; 2]]) -> Vec<(SegmentKind, Segment)> {
    SEGMENTS
        .iter()
        .map(|&(k, a, b)| (k, Segment::new(endpoint(joints, a), endpoint(joints, b))))
        .collect()
}

/// A predicted pose as joint pixel positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedPose {
    pub image_id: String,
    pub joints: Vec<[f64; 2]>,
}

/// Joint positions of a parse: the centre of each joint part's cell.
pub fn joints_from_parse(
    result: &ParseResult,
    tree: &SkeletonTree,
    cell_size: usize,
) -> Result<Vec<[f64; 2]>> {
    (0..NUM_JOINTS)
        .map(|j| {
            let part = tree.joint_part(j).ok_or_else(|| {
                PoseError::InvalidArgument(format!("tree has no part for joint {j}"))
            })?;
            Ok(cell_center(result.parts[part].location, cell_size))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PcpCell {
    pub correct: usize,
    pub total: usize,
}

impl PcpCell {
    /// Percentage correct; zero when nothing was evaluated.
    pub fn percentage(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64 * 100.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PcpReport {
    /// One entry per column of [`SegmentKind::ALL`].
    pub columns: Vec<(SegmentKind, PcpCell)>,
    pub total: PcpCell,
}

impl PcpReport {
    pub fn column(&self, kind: SegmentKind) -> PcpCell {
        self.columns
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|c| c.1)
            .unwrap_or_default()
    }

    /// Fraction (not percentage) of correct segments overall.
    pub fn total_fraction(&self) -> f64 {
        self.total.percentage() / 100.0
    }

    pub fn to_table(&self) -> String {
        let mut head = String::new();
        let mut row = String::new();
        for (k, c) in &self.columns {
            let _ = write!(head, "{:>10}", k.label());
            let _ = write!(row, "{:>10.1}", c.percentage());
        }
        let _ = write!(head, "{:>10}", "Total");
        let _ = write!(row, "{:>10.1}", self.total.percentage());
        format!("{head}\n{row}\n")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("segment,correct,total,percentage\n");
        let rows = self
            .columns
            .iter()
            .map(|(k, c)| (k.label(), c))
            .chain([("Total", &self.total)]);
        for (label, c) in rows {
            let _ = writeln!(
                out,
                "{label},{},{},{:.4}",
                c.correct,
                c.total,
                c.percentage()
            );
        }
        out
    }
}

/// Scores predictions against annotations, matched by image id. An
/// annotated image without a prediction counts every one of its segments as
/// wrong. Segments with an invisible endpoint or zero true length are not
/// evaluated.
pub fn evaluate(predictions: &[PredictedPose], annotations: &[Annotation]) -> Result<PcpReport> {
    let by_id: HashMap<&str, &PredictedPose> = predictions
        .iter()
        .map(|p| (p.image_id.as_str(), p))
        .collect();
    let mut cells: HashMap<SegmentKind, PcpCell> = HashMap::new();
    for ann in annotations {
        if ann.joints.len() != NUM_JOINTS {
            return Err(PoseError::LengthMismatch {
                expected: NUM_JOINTS,
                actual: ann.joints.len(),
            });
        }
        let truth: Vec<[f64; 2]> = ann.joints.iter().map(|j| [j.x, j.y]).collect();
        let visible = |j: usize| {
            if j == PELVIS {
                ann.joints[joint::R_HIP].visible && ann.joints[joint::L_HIP].visible
            } else {
                ann.joints[j].visible
            }
        };
        let pred = match by_id.get(ann.image_id.as_str()) {
            Some(p) if p.joints.len() == NUM_JOINTS => Some(segments(&p.joints)),
            Some(p) => {
                return Err(PoseError::LengthMismatch {
                    expected: NUM_JOINTS,
                    actual: p.joints.len(),
                })
            }
            None => None,
        };
        for (s, (kind, t)) in segments(&truth).into_iter().enumerate() {
            let (_, a, b) = SEGMENTS[s];
            if !visible(a) || !visible(b) || t.length() <= 0.0 {
                continue;
            }
            let ok = match &pred {
                Some(p) => pcp_correct(&p[s].1, &t, DEFAULT_FRACTION)?,
                None => false,
            };
            let cell = cells.entry(kind).or_default();
            cell.total += 1;
            cell.correct += ok as usize;
        }
    }
    let columns: Vec<(SegmentKind, PcpCell)> = SegmentKind::ALL
        .iter()
        .map(|&k| (k, cells.get(&k).copied().unwrap_or_default()))
        .collect();
    let total = columns
        .iter()
        .fold(PcpCell::default(), |acc, (_, c)| PcpCell {
            correct: acc.correct + c.correct,
            total: acc.total + c.total,
        });
    Ok(PcpReport { columns, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::JointAnnotation;

    fn pose() -> Vec<[f64; 2]> {
        vec![
            [50.0, 10.0],
            [50.0, 30.0],
            [40.0, 32.0],
            [36.0, 55.0],
            [34.0, 78.0],
            [60.0, 32.0],
            [64.0, 55.0],
            [66.0, 78.0],
            [44.0, 80.0],
            [44.0, 110.0],
            [44.0, 140.0],
            [56.0, 80.0],
            [56.0, 110.0],
            [56.0, 140.0],
        ]
    }

    fn annotation(id: &str, joints: &[[f64; 2]]) -> Annotation {
        Annotation {
            image_id: id.into(),
            joints: joints
                .iter()
                .map(|p| JointAnnotation {
                    x: p[0],
                    y: p[1],
                    visible: true,
                })
                .collect(),
            scale: 150.0,
        }
    }

    #[test]
    fn documented_cases() {
        let t = Segment::new([0.0, 0.0], [10.0, 0.0]);
        assert!(pcp_correct(&Segment::new([0.0, 2.0], [10.0, 3.0]), &t, 0.5).unwrap());
        assert!(pcp_correct(&t, &t, 0.5).unwrap());
        assert!(!pcp_correct(&Segment::new([0.0, 6.0], [10.0, 0.0]), &t, 0.5).unwrap());
    }

    #[test]
    fn endpoints_are_not_swapped() {
        let t = Segment::new([0.0, 0.0], [10.0, 0.0]);
        assert!(!pcp_correct(&Segment::new([10.0, 0.0], [0.0, 0.0]), &t, 0.5).unwrap());
    }

    #[test]
    fn zero_length_truth_is_an_error() {
        let t = Segment::new([1.0, 1.0], [1.0, 1.0]);
        assert!(pcp_correct(&t, &t, 0.5).is_err());
    }

    #[test]
    fn identity_gives_full_marks() {
        let anns = vec![annotation("a", &pose()), annotation("b", &pose())];
        let preds: Vec<PredictedPose> = anns
            .iter()
            .map(|a| PredictedPose {
                image_id: a.image_id.clone(),
                joints: pose(),
            })
            .collect();
        let r = evaluate(&preds, &anns).unwrap();
        assert_eq!(
            r.total,
            PcpCell {
                correct: 20,
                total: 20
            }
        );
        for (_, c) in &r.columns {
            assert_eq!(c.percentage(), 100.0);
        }
        assert!(r.to_table().contains("100.0"));
    }

    #[test]
    fn no_predictions_give_zero() {
        let anns = vec![annotation("a", &pose())];
        let r = evaluate(&[], &anns).unwrap();
        assert_eq!(
            r.total,
            PcpCell {
                correct: 0,
                total: 10
            }
        );
        assert_eq!(r.total.percentage(), 0.0);
    }

    #[test]
    fn hand_counted_three_images() {
        let truth = pose();
        // image a: exact. image b: right wrist far off (right lower arm
        // wrong). image c: missing.
        let mut b = pose();
        b[joint::R_WRIST] = [0.0, 0.0];
        let anns = vec![
            annotation("a", &truth),
            annotation("b", &truth),
            annotation("c", &truth),
        ];
        let preds = vec![
            PredictedPose {
                image_id: "a".into(),
                joints: truth.clone(),
            },
            PredictedPose {
                image_id: "b".into(),
                joints: b,
            },
        ];
        let r = evaluate(&preds, &anns).unwrap();
        assert_eq!(
            r.total,
            PcpCell {
                correct: 19,
                total: 30
            }
        );
        assert_eq!(
            r.column(SegmentKind::LowerArm),
            PcpCell {
                correct: 3,
                total: 6
            }
        );
        assert_eq!(
            r.column(SegmentKind::Torso),
            PcpCell {
                correct: 2,
                total: 3
            }
        );
        let csv = r.to_csv();
        assert!(csv.contains("L.Arm,3,6,50.0000"));
        assert!(csv.contains("Total,19,30,63.3333"));
    }
}
