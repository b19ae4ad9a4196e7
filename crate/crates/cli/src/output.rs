//! CSV/number formatting shared by the subcommands. Numeric cells use
//! 12-significant-digit scientific notation so golden files diff cleanly.

use std::path::Path;

use impact_game_core::Error;

/// 12 significant digits, scientific notation, '.' decimal separator.
pub fn format_significant(value: f64) -> String {
    format!("{value:.11e}")
}

/// Writes to the file when given, otherwise to stdout.
pub fn write_text(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Keeps error messages CSV-safe for the status column.
pub fn csv_safe(message: &str) -> String {
    message.replace([',', '\n', '\r'], ";")
}
