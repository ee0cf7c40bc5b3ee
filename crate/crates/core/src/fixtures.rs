//! Reference explanation sets used by tests, examples and the CLI docs.
//!
//! `table1` is the three-explainer, seven-feature ranking with signs from
//! the worked aggregation example. Only ranks and signs are given there, so
//! the magnitudes below are illustrative; they are non-increasing within
//! each explainer and the `0` entries are literal zeros. `table2` is the
//! LIME/SHAP comparison with its published weights.

use crate::model::{Explanation, ExplanationSet, Prediction};

pub fn table1() -> ExplanationSet {
    ExplanationSet::new(
        "table1",
        Prediction::new("Defect", None),
        vec![
            Explanation::from_pairs(
                "LIME",
                [
                    ("F1", 0.40),
                    ("F2", -0.30),
                    ("F3", 0.20),
                    ("F5", -0.15),
                    ("F4", 0.10),
                    ("F6", 0.0),
                    ("F7", 0.0),
                ],
            ),
            Explanation::from_pairs(
                "SHAP",
                [
                    ("F1", 0.38),
                    ("F3", -0.25),
                    ("F2", 0.21),
                    ("F6", 0.12),
                    ("F5", -0.09),
                    ("F7", 0.0),
                    ("F4", 0.0),
                ],
            ),
            Explanation::from_pairs(
                "BreakDown",
                [
                    ("F1", 0.35),
                    ("F3", 0.27),
                    ("F2", -0.18),
                    ("F5", -0.11),
                    ("F4", -0.06),
                    ("F6", 0.0),
                    ("F7", 0.0),
                ],
            ),
        ],
    )
}

pub fn table2() -> ExplanationSet {
    ExplanationSet::new(
        "table2",
        Prediction::new("Defect", None),
        vec![
            Explanation::from_pairs(
                "LIME",
                [
                    ("CountLine", 0.24),
                    ("CountPath_Max", 0.09),
                    ("CountPath_Mean", 0.07),
                    ("Added_lines", 0.06),
                    ("Del_lines", 0.06),
                ],
            ),
            Explanation::from_pairs(
                "SHAP",
                [
                    ("CountLine", 0.22),
                    ("Del_lines", 0.14),
                    ("CountPath_Max", 0.08),
                    ("CountPath_Mean", -0.03),
                    ("Added_lines", 0.01),
                ],
            ),
        ],
    )
}
