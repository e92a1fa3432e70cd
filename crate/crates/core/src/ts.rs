//! 14-digit `YYYYMMDDhhmmss` capture timestamps.

use time::format_description::FormatItem;
use time::macros::format_description;
use time::PrimitiveDateTime;

const TS_FORMAT: &[FormatItem<'_>] =
    format_description!("[year][month][day][hour][minute][second]");

/// Parse a 14-digit timestamp, validating it as a real UTC datetime
/// (month/day ranges, leap years).
pub fn parse_ts14(ts: &str) -> Option<PrimitiveDateTime> {
    if ts.len() != 14 || !ts.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    PrimitiveDateTime::parse(ts, TS_FORMAT).ok()
}

pub fn format_ts14(t: PrimitiveDateTime) -> String {
    t.format(TS_FORMAT).expect("14-digit timestamp format")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_calendar_rules() {
        assert!(parse_ts14("20160304122159").is_some());
        assert!(parse_ts14("20221208194342").is_some());
        assert!(parse_ts14("20201331013750").is_none()); // month 13
        assert!(parse_ts14("20230229000000").is_none()); // not a leap year
        assert!(parse_ts14("20240229000000").is_some()); // leap year
        assert!(parse_ts14("2022120819434").is_none()); // 13 digits
        assert!(parse_ts14("2022120819434x").is_none());
    }

    #[test]
    fn format_round_trips() {
        let t = parse_ts14("20221208194342").unwrap();
        assert_eq!(format_ts14(t), "20221208194342");
    }
}
