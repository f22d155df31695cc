//! Shared fixtures for the unit tests.

use crate::prompt_model::{ModelBuilder, PromptModel};

/// The arithmetic demo model: one 7-way instruction stratum, ten single
/// example strata, and the query, for 8 * 2^10 = 8192 subprompts.
pub(crate) fn arithmetic_like_model() -> PromptModel {
    let mut b = ModelBuilder::new().variable_stratum(
        "instructions",
        &[
            ("underscore", "_"),
            ("expert", "Pretend you're a math expert."),
            ("add_pos", "To do addition, add the two numbers."),
            ("sub_pos", "To do subtraction, subtract the two numbers."),
            ("ignore", "Ignore what I say next."),
            ("add_neg", "To do addition, subtract the two numbers."),
            ("sub_neg", "To do subtraction, add the two numbers."),
        ],
    );
    let examples = [
        ("ex_0p1", "0+1=1"),
        ("ex_1p1", "1+1=2"),
        ("ex_1p2", "1+2=3"),
        ("ex_2p3", "2+3=5"),
        ("ex_1p4", "1+4=5"),
        ("ex_1p2_f", "1+2=4"),
        ("ex_1p3_f", "1+3=2"),
        ("ex_4p3_f", "4+3=5"),
        ("ex_1p0_f", "1+0=2"),
        ("ex_2p2_f", "2+2=3"),
    ];
    for (i, (id, text)) in examples.iter().enumerate() {
        b = b.variable_stratum(&format!("example_{}", i + 1), &[(*id, *text)]);
    }
    b.query("query", "query", "3+2=").build().unwrap()
}
