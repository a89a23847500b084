// Temporary exploration harness; replaced by the acceptance suite.
use porosplit::verify;

#[test]
fn explore_fast_criteria() {
    for f in [
        verify::criterion_1 as fn() -> porosplit::Result<verify::CriterionResult>,
        verify::criterion_2,
        verify::criterion_3,
        verify::criterion_4,
        verify::criterion_5,
        verify::criterion_6,
        verify::criterion_7,
    ] {
        match f() {
            Ok(r) => println!("{}", r.line()),
            Err(e) => println!("ERROR: {e}"),
        }
    }
}
