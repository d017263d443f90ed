//! Validates choreographic annotations and prints the token ids of the
//! valid ones.

use choreoflow::choreo::{
    extract_tokens, is_valid, validate_annotation, ChoreoAnnotation, TokenLayout, Vocabulary,
};

const GOOD: &str = r#"{
  "phrases": [
    { "body": { "right_arm": "reach", "waist": "twist" },
      "space": { "plane": "transverse", "direction": "right", "level": "middle" },
      "orientation": 3,
      "effort": { "weight": "light", "time": "sustained" } }
  ],
  "free_text": "reach across and turn",
  "word_count": 4
}"#;

const BAD: &str = r#"{
  "phrases": [
    { "body": { "tail": "wag" }, "space": { "plane": "frontal" }, "orientation": 9 }
  ],
  "word_count": 0
}"#;

fn main() {
    let vocab = Vocabulary::default();
    let layout = TokenLayout::new(&vocab);
    println!(
        "vocabulary size {} ({} slots per phrase)",
        layout.vocab_size,
        layout.slots_per_phrase()
    );
    for (name, text) in [("good", GOOD), ("bad", BAD)] {
        let a = ChoreoAnnotation::from_json(text).unwrap();
        let diags = validate_annotation(&a, &vocab);
        println!(
            "{name}: {}",
            if is_valid(&diags) { "valid" } else { "invalid" }
        );
        for d in &diags {
            println!("  {d}");
        }
        if is_valid(&diags) {
            println!("  tokens {:?}", extract_tokens(&a, &vocab).unwrap());
        }
    }
}
