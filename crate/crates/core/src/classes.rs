//! The fixed object vocabulary: 58 classes, 35 global subtypes, 3 sizes.

pub const CLASS_COUNT: usize = 58;
pub const SUBTYPE_COUNT: usize = 35;
pub const SIZE_COUNT: usize = 3;

/// Poses and expressions of the two people classes multiply out to the subtype index.
pub const PERSON_POSES: usize = 7;
pub const PERSON_EXPRESSIONS: usize = 5;

pub const CLASS_NAMES: [&str; CLASS_COUNT] = [
    "boy",
    "girl",
    "bear",
    "cat",
    "dog",
    "duck",
    "owl",
    "snake",
    "baseball cap",
    "crown",
    "chef hat",
    "pirate hat",
    "winter hat",
    "beanie",
    "wizard hat",
    "viking hat",
    "witch hat",
    "sunglasses",
    "glasses",
    "pie",
    "pizza",
    "hot dog",
    "ketchup",
    "mustard",
    "hamburger",
    "drink",
    "baseball bat",
    "baseball glove",
    "basketball",
    "beach ball",
    "football",
    "soccer ball",
    "tennis ball",
    "tennis racket",
    "frisbee",
    "kite",
    "shovel",
    "bucket",
    "balloons",
    "apple tree",
    "pine tree",
    "oak tree",
    "slide",
    "sandbox",
    "swing set",
    "tent",
    "table",
    "grill",
    "bench",
    "fire",
    "sun",
    "cloud",
    "rain cloud",
    "lightning",
    "airplane",
    "rocket",
    "butterfly",
    "bee",
];

pub const SIZE_NAMES: [&str; SIZE_COUNT] = ["small", "medium", "large"];

pub fn class_name(id: usize) -> Option<&'static str> {
    CLASS_NAMES.get(id).copied()
}

pub fn class_id(name: &str) -> Option<usize> {
    CLASS_NAMES
        .iter()
        .position(|n| n.eq_ignore_ascii_case(name))
}

pub fn is_person(class_id: usize) -> bool {
    class_id < 2
}

/// Subtype index for a person's pose and facial expression.
pub fn person_subtype(pose: usize, expression: usize) -> usize {
    pose * PERSON_EXPRESSIONS + expression
}
