//! Periodic-table lookups and the compact element classes fed to the encoder.

const SYMBOLS: [&str; 54] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe",
];

/// Atomic number of a symbol in canonical capitalization (`"Cl"`, not `"CL"`).
pub fn atomic_number(symbol: &str) -> Option<u8> {
    SYMBOLS
        .iter()
        .position(|s| *s == symbol)
        .map(|i| i as u8 + 1)
}

/// Atomic number of a symbol in any capitalization.
pub fn atomic_number_ci(symbol: &str) -> Option<u8> {
    SYMBOLS
        .iter()
        .position(|s| s.eq_ignore_ascii_case(symbol))
        .map(|i| i as u8 + 1)
}

pub fn symbol(atomic_number: u8) -> Option<&'static str> {
    SYMBOLS.get((atomic_number as usize).checked_sub(1)?).copied()
}

/// Element buckets seen by the encoder's type embedding and type head.
pub const ELEMENT_CLASSES: [u8; 11] = [1, 5, 6, 7, 8, 9, 15, 16, 17, 35, 53];

/// Index of the catch-all class for elements outside [`ELEMENT_CLASSES`].
pub const OTHER_CLASS: usize = ELEMENT_CLASSES.len();

/// Reserved class id that replaces the element of masked atoms.
pub const MASK_CLASS: usize = OTHER_CLASS + 1;

/// Number of element classes the type head predicts (excludes MASK).
pub const PREDICTED_CLASSES: usize = OTHER_CLASS + 1;

/// Size of the element embedding table (includes MASK).
pub const CLASS_COUNT: usize = MASK_CLASS + 1;

pub fn element_class(atomic_number: u8) -> usize {
    ELEMENT_CLASSES
        .iter()
        .position(|&z| z == atomic_number)
        .unwrap_or(OTHER_CLASS)
}
