//! Parsers for position reports: CSV/JSON records and NMEA AIVDM/AIVDO
//! position-report sentences (message types 1, 2 and 3).

use std::io::BufRead;

use serde::Deserialize;
use thiserror::Error;

use crate::domain::{AisMessage, DomainError, Mmsi, Source};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("malformed line ({field}): {detail}")]
    Malformed { field: String, detail: String },
    #[error("{field} out of range: {value}")]
    Range { field: String, value: f64 },
}

impl From<DomainError> for IngestError {
    fn from(e: DomainError) -> Self {
        match e {
            DomainError::Range { field, value } => IngestError::Range {
                field: field.to_string(),
                value,
            },
            other => IngestError::Malformed {
                field: "line".into(),
                detail: other.to_string(),
            },
        }
    }
}

fn malformed(field: &str, detail: impl Into<String>) -> IngestError {
    IngestError::Malformed {
        field: field.to_string(),
        detail: detail.into(),
    }
}

const FIELDS: [&str; 7] = ["mmsi", "timestamp", "lat", "lon", "sog", "cog", "source"];

/// Parses one CSV (`mmsi,timestamp,lat,lon,sog,cog[,source]`) or JSON-object line.
pub fn parse_record(line: &str) -> Result<AisMessage, IngestError> {
    let line = line.trim();
    if line.is_empty() {
        return Err(malformed("line", "empty line"));
    }
    if line.starts_with('{') {
        return parse_json_record(line);
    }
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 6 && fields.len() != 7 {
        return Err(malformed(
            "line",
            format!("expected 6 or 7 comma-separated fields, got {}", fields.len()),
        ));
    }
    let mmsi = fields[0]
        .parse::<Mmsi>()
        .map_err(|e| malformed(FIELDS[0], format!("{:?}: {e}", fields[0])))?;
    let timestamp = fields[1]
        .parse::<i64>()
        .map_err(|e| malformed(FIELDS[1], format!("{:?}: {e}", fields[1])))?;
    let mut nums = [0f64; 4];
    for (i, slot) in nums.iter_mut().enumerate() {
        let raw = fields[2 + i];
        let v = raw
            .parse::<f64>()
            .map_err(|e| malformed(FIELDS[2 + i], format!("{raw:?}: {e}")))?;
        if !v.is_finite() {
            return Err(malformed(FIELDS[2 + i], format!("{raw:?} is not finite")));
        }
        *slot = v;
    }
    let source = match fields.get(6) {
        Some(s) => s
            .parse::<Source>()
            .map_err(|_| malformed(FIELDS[6], format!("unknown source {s:?}")))?,
        None => Source::Unknown,
    };
    let msg = AisMessage::new(mmsi, timestamp, nums[0], nums[1], nums[2], nums[3])?;
    Ok(msg.with_source(source))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    mmsi: Mmsi,
    timestamp: i64,
    lat: f64,
    lon: f64,
    sog: f64,
    cog: f64,
    #[serde(default)]
    source: Source,
}

fn parse_json_record(line: &str) -> Result<AisMessage, IngestError> {
    let r: JsonRecord = serde_json::from_str(line).map_err(|e| malformed("json", e.to_string()))?;
    let msg = AisMessage::new(r.mmsi, r.timestamp, r.lat, r.lon, r.sog, r.cog)?;
    Ok(msg.with_source(r.source))
}

/// Inverse of [`parse_record`] for the CSV form. Floats use shortest round-trip formatting.
pub fn render_record(m: &AisMessage) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        m.mmsi,
        m.timestamp,
        m.lat,
        m.lon,
        m.sog,
        m.cog,
        m.source.as_str()
    )
}

pub fn render_json(m: &AisMessage) -> String {
    serde_json::to_string(m).expect("AisMessage serializes")
}

pub const CSV_HEADER: &str = "mmsi,timestamp,lat,lon,sog,cog,source";

/// A record line that failed to parse.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line_no: usize,
    pub error: IngestError,
}

/// Reads a record file. Blank lines, `#` comments and a leading header are skipped.
pub fn read_records<R: BufRead>(reader: R) -> std::io::Result<(Vec<AisMessage>, Vec<LineError>)> {
    let mut msgs = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') || (i == 0 && t.starts_with("mmsi")) {
            continue;
        }
        match parse_record(t) {
            Ok(m) => msgs.push(m),
            Err(error) => errors.push(LineError { line_no: i + 1, error }),
        }
    }
    Ok((msgs, errors))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AivdmError {
    #[error("not an AIVDM/AIVDO sentence: {0}")]
    Syntax(String),
    #[error("checksum mismatch: computed {computed:02X}, sentence says {stated:02X}")]
    ChecksumMismatch { computed: u8, stated: u8 },
    #[error("multipart sentences are not supported ({count} fragments)")]
    MultipartUnsupported { count: u32 },
    #[error("invalid armoring character {0:?}")]
    BadArmor(char),
    #[error("payload too short: {bits} bits")]
    Truncated { bits: usize },
    #[error("message type {0} is not a position report")]
    NotPositionReport(u8),
    #[error("speed or course not available")]
    MissingKinematics,
    #[error("position not available or out of range")]
    BadPosition,
    #[error("MMSI {0} is not a valid vessel identifier")]
    BadMmsi(u32),
}

/// Maps one armored payload character to its six-bit value.
pub fn dearmor_char(c: char) -> Result<u8, AivdmError> {
    let v = c as u32;
    if !(48..=119).contains(&v) || (88..=95).contains(&v) {
        return Err(AivdmError::BadArmor(c));
    }
    let mut b = v - 48;
    if b > 40 {
        b -= 8;
    }
    Ok((b & 0x3f) as u8)
}

/// XOR of the characters strictly between the leading `!` and the `*`.
pub fn nmea_checksum(body: &str) -> u8 {
    body.bytes().fold(0u8, |acc, b| acc ^ b)
}

struct Bits {
    sixbits: Vec<u8>,
}

impl Bits {
    fn len(&self) -> usize {
        self.sixbits.len() * 6
    }

    fn unsigned(&self, start: usize, width: usize) -> u64 {
        let mut v = 0u64;
        for i in start..start + width {
            let word = self.sixbits[i / 6];
            let bit = (word >> (5 - i % 6)) & 1;
            v = (v << 1) | bit as u64;
        }
        v
    }

    fn signed(&self, start: usize, width: usize) -> i64 {
        let raw = self.unsigned(start, width);
        let shift = 64 - width;
        ((raw << shift) as i64) >> shift
    }
}

/// Decodes one single-fragment `!AIVDM`/`!AIVDO` position report. AIVDM carries no
/// full timestamp, so the caller supplies it.
pub fn decode_aivdm(sentence: &str, timestamp: i64) -> Result<AisMessage, AivdmError> {
    let sentence = sentence.trim();
    let body_and_sum = sentence
        .strip_prefix('!')
        .ok_or_else(|| AivdmError::Syntax("missing leading '!'".into()))?;
    let (body, sum) = body_and_sum
        .rsplit_once('*')
        .ok_or_else(|| AivdmError::Syntax("missing '*' checksum".into()))?;
    let sum = sum.get(..2).filter(|s| s.is_ascii()).unwrap_or(sum);
    let stated = u8::from_str_radix(sum, 16)
        .ok()
        .filter(|_| sum.len() == 2)
        .ok_or_else(|| AivdmError::Syntax(format!("bad checksum field {sum:?}")))?;
    let computed = nmea_checksum(body);
    if computed != stated {
        return Err(AivdmError::ChecksumMismatch { computed, stated });
    }

    let fields: Vec<&str> = body.split(',').collect();
    if fields.len() != 7 {
        return Err(AivdmError::Syntax(format!("expected 7 fields, got {}", fields.len())));
    }
    if !matches!(fields[0], "AIVDM" | "AIVDO") {
        return Err(AivdmError::Syntax(format!(
            "unsupported talker/sentence {:?}",
            fields[0]
        )));
    }
    let count: u32 = fields[1]
        .parse()
        .map_err(|_| AivdmError::Syntax(format!("bad fragment count {:?}", fields[1])))?;
    let index: u32 = fields[2]
        .parse()
        .map_err(|_| AivdmError::Syntax(format!("bad fragment index {:?}", fields[2])))?;
    if count != 1 || index != 1 {
        return Err(AivdmError::MultipartUnsupported { count });
    }

    let sixbits = fields[5].chars().map(dearmor_char).collect::<Result<Vec<u8>, _>>()?;
    let bits = Bits { sixbits };
    if bits.len() < 6 {
        return Err(AivdmError::Truncated { bits: bits.len() });
    }
    let msg_type = bits.unsigned(0, 6) as u8;
    if !(1..=3).contains(&msg_type) {
        return Err(AivdmError::NotPositionReport(msg_type));
    }
    // COG ends at bit 128
    if bits.len() < 128 {
        return Err(AivdmError::Truncated { bits: bits.len() });
    }

    let mmsi = bits.unsigned(8, 30) as u32;
    let sog_raw = bits.unsigned(50, 10);
    let lon_raw = bits.signed(61, 28);
    let lat_raw = bits.signed(89, 27);
    let cog_raw = bits.unsigned(116, 12);

    if sog_raw == 1023 || cog_raw >= 3600 {
        return Err(AivdmError::MissingKinematics);
    }
    let lon = lon_raw as f64 / 600_000.0;
    let lat = lat_raw as f64 / 600_000.0;
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(AivdmError::BadPosition);
    }
    let sog = sog_raw as f64 / 10.0;
    let cog = cog_raw as f64 / 10.0;
    AisMessage::new(mmsi, timestamp, lat, lon, sog, cog).map_err(|e| match e {
        DomainError::Range { field: "mmsi", .. } => AivdmError::BadMmsi(mmsi),
        _ => AivdmError::BadPosition,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimestampedAivdmError {
    #[error("expected `epoch_seconds<TAB>sentence`")]
    MissingTab,
    #[error("bad timestamp {0:?}")]
    BadTimestamp(String),
    #[error(transparent)]
    Aivdm(#[from] AivdmError),
}

/// Parses the `epoch_seconds<TAB>!AIVDM...` line format.
pub fn parse_timestamped_aivdm(line: &str) -> Result<AisMessage, TimestampedAivdmError> {
    let (ts, sentence) = line
        .trim_end_matches(['\r', '\n'])
        .split_once('\t')
        .ok_or(TimestampedAivdmError::MissingTab)?;
    let ts: i64 = ts
        .trim()
        .parse()
        .map_err(|_| TimestampedAivdmError::BadTimestamp(ts.to_string()))?;
    Ok(decode_aivdm(sentence, ts)?)
}
