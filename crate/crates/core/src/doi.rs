//! Degree-of-ill-posedness estimation and the fusion rule.
//!
//! ```text
//! doi = disjoint(O_l, O_r) * (1 - iou(O_l, M_o))
//! ```
//!
//! `O_l` and `O_r` are the open-vocabulary object masks on the live and
//! reference images, `M_o` the thresholded base change mask. When
//! `lower < doi < upper` the live object mask replaces the base mask.

use crate::mask::{self, BinaryMask, MaskError};
use serde::{Deserialize, Serialize};

pub const DEFAULT_LOWER_THRESHOLD: f64 = 0.0;
pub const DEFAULT_UPPER_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoiThresholds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for DoiThresholds {
    fn default() -> Self {
        Self {
            lower: DEFAULT_LOWER_THRESHOLD,
            upper: DEFAULT_UPPER_THRESHOLD,
        }
    }
}

impl DoiThresholds {
    /// Both bounds are exclusive.
    pub fn decide(&self, doi: f64) -> Decision {
        if self.lower < doi && doi < self.upper {
            Decision::AdoptOvs
        } else {
            Decision::AdoptBase
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    /// The live object mask is taken as the change result.
    AdoptOvs,
    /// The base detector's mask is kept.
    AdoptBase,
}

/// Intermediate values of one DoI evaluation and the decision taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoiRecord {
    /// 1 when the live and reference object masks share no pixel.
    pub f_b: u8,
    pub iou_ol_mo: f64,
    pub doi: f64,
    pub decision: Decision,
    pub thresholds: DoiThresholds,
}

pub fn compute_doi(
    live_objects: &BinaryMask,
    ref_objects: &BinaryMask,
    base: &BinaryMask,
    thresholds: DoiThresholds,
) -> Result<DoiRecord, MaskError> {
    let f_b = u8::from(mask::disjoint(live_objects, ref_objects)?);
    let iou_ol_mo = mask::iou(live_objects, base)?;
    let doi = f64::from(f_b) * (1.0 - iou_ol_mo);
    Ok(DoiRecord {
        f_b,
        iou_ol_mo,
        doi,
        decision: thresholds.decide(doi),
        thresholds,
    })
}

/// Returns a copy of whichever input the record's decision selects.
pub fn fuse(
    record: &DoiRecord,
    live_objects: &BinaryMask,
    base: &BinaryMask,
) -> Result<BinaryMask, MaskError> {
    mask::same_dims(live_objects, base)?;
    Ok(match record.decision {
        Decision::AdoptOvs => live_objects.clone(),
        Decision::AdoptBase => base.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
    }

    #[test]
    fn overlap_zeroes_doi() {
        let ol = rect(10, 10, 0, 0, 4, 4);
        let or = rect(10, 10, 3, 3, 6, 6);
        let mo = rect(10, 10, 0, 0, 2, 2);
        let r = compute_doi(&ol, &or, &mo, DoiThresholds::default()).unwrap();
        assert_eq!((r.f_b, r.doi, r.decision), (0, 0.0, Decision::AdoptBase));
    }

    #[test]
    fn half_iou_adopts_ovs() {
        // O_l: 8 px; M_o: 4 of those 8 -> IoU 4/8.
        let ol = rect(10, 10, 0, 0, 2, 4);
        let mo = rect(10, 10, 0, 0, 2, 2);
        let or = BinaryMask::new(10, 10);
        let r = compute_doi(&ol, &or, &mo, DoiThresholds::default()).unwrap();
        assert_eq!(r.iou_ol_mo, 0.5);
        assert_eq!(r.doi, 0.5);
        assert_eq!(r.decision, Decision::AdoptOvs);
        assert_eq!(fuse(&r, &ol, &mo).unwrap(), ol);
    }

    #[test]
    fn twentieth_iou_keeps_base() {
        // O_l: 1 px inside a 20 px M_o -> IoU 1/20.
        let mo = rect(10, 10, 0, 0, 10, 2);
        let ol = rect(10, 10, 0, 0, 1, 1);
        let or = rect(10, 10, 9, 9, 10, 10);
        let r = compute_doi(&ol, &or, &mo, DoiThresholds::default()).unwrap();
        assert_eq!(r.iou_ol_mo, 0.05);
        assert_eq!(r.doi, 0.95);
        assert_eq!(r.decision, Decision::AdoptBase);
        assert_eq!(fuse(&r, &ol, &mo).unwrap(), mo);
    }

    #[test]
    fn empty_live_objects_keep_base() {
        let e = BinaryMask::new(6, 6);
        let mo = rect(6, 6, 1, 1, 3, 3);
        let r = compute_doi(&e, &e, &mo, DoiThresholds::default()).unwrap();
        assert_eq!((r.f_b, r.doi, r.decision), (1, 1.0, Decision::AdoptBase));
        assert_eq!(fuse(&r, &e, &mo).unwrap(), mo);

        let r = compute_doi(&e, &e, &e, DoiThresholds::default()).unwrap();
        assert_eq!((r.doi, r.decision), (0.0, Decision::AdoptBase));
    }

    #[test]
    fn upper_bound_is_exclusive() {
        let t = DoiThresholds::default();
        assert_eq!(t.decide(0.9), Decision::AdoptBase);
        assert_eq!(t.decide(0.0), Decision::AdoptBase);
        assert_eq!(t.decide(0.899_999), Decision::AdoptOvs);
        assert_eq!(t.decide(1e-12), Decision::AdoptOvs);
    }

    #[test]
    fn dimension_mismatch() {
        let a = BinaryMask::new(4, 4);
        let b = BinaryMask::new(4, 3);
        assert!(compute_doi(&a, &a, &b, DoiThresholds::default()).is_err());
        assert!(compute_doi(&a, &b, &a, DoiThresholds::default()).is_err());
        let r = compute_doi(&a, &a, &a, DoiThresholds::default()).unwrap();
        assert!(fuse(&r, &a, &b).is_err());
    }

    #[test]
    fn record_json_shape() {
        let r = DoiRecord {
            f_b: 1,
            iou_ol_mo: 0.5,
            doi: 0.5,
            decision: Decision::AdoptOvs,
            thresholds: DoiThresholds::default(),
        };
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(
            v,
            serde_json::json!({
                "f_b": 1, "iou_ol_mo": 0.5, "doi": 0.5, "decision": "AdoptOvs",
                "thresholds": {"lower": 0.0, "upper": 0.9}
            })
        );
    }
}
