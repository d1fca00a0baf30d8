mod common;

#[test]
fn engine_matches_scalar_reference_bit_for_bit() {
    for (name, outcome) in common::oracle::cases() {
        match outcome {
            Ok((fired, slots)) => {
                println!("{name}: {fired} of {slots} spike slots");
                assert!(fired > 0 && fired < slots, "{name}: degenerate spike pattern");
            }
            Err(e) => panic!("{name}: {e}"),
        }
    }
}
