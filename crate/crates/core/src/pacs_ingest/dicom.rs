//! Minimal DICOM part-10 reader for study-level attributes.
//!
//! Handles the two uncompressed little-endian transfer syntaxes. Every element
//! that is not needed is skipped by seeking over its declared length, so pixel
//! data is never read.

use std::io::{self, Read, Seek, SeekFrom};

use super::{IngestError, StudyAttributes, StudyMeta, Tag};

const PREAMBLE_LEN: usize = 128;
const MAGIC: &[u8; 4] = b"DICM";
const UNDEFINED_LENGTH: u32 = 0xFFFF_FFFF;
// Study-level string attributes are short; anything bigger is corrupt.
const MAX_WANTED_VALUE_LEN: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferSyntax {
    ExplicitVrLittleEndian,
    ImplicitVrLittleEndian,
}

impl TransferSyntax {
    pub const EXPLICIT_LE_UID: &'static str = "1.2.840.10008.1.2.1";
    pub const IMPLICIT_LE_UID: &'static str = "1.2.840.10008.1.2";

    pub fn from_uid(uid: &str) -> Result<Self, IngestError> {
        match uid.trim_end_matches(['\0', ' ']).trim() {
            Self::EXPLICIT_LE_UID => Ok(Self::ExplicitVrLittleEndian),
            Self::IMPLICIT_LE_UID => Ok(Self::ImplicitVrLittleEndian),
            other => Err(IngestError::UnsupportedSyntax(other.to_string())),
        }
    }

    pub fn uid(self) -> &'static str {
        match self {
            Self::ExplicitVrLittleEndian => Self::EXPLICIT_LE_UID,
            Self::ImplicitVrLittleEndian => Self::IMPLICIT_LE_UID,
        }
    }
}

/// VRs whose explicit encoding carries 2 reserved bytes and a 32-bit length.
fn has_long_length(vr: [u8; 2]) -> bool {
    matches!(&vr, b"OB" | b"OD" | b"OF" | b"OL" | b"OV" | b"OW" | b"SQ" | b"SV" | b"UC" | b"UN" | b"UR" | b"UT" | b"UV")
}

fn wanted(tag: Tag) -> bool {
    tag == Tag::TRANSFER_SYNTAX_UID || Tag::REQUIRED.contains(&tag)
}

fn decode_text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).trim_end_matches(['\0', ' ']).trim().to_string()
}

struct ElementReader<R> {
    inner: R,
    pos: u64,
    end: u64,
}

impl<R: Read + Seek> ElementReader<R> {
    fn new(mut inner: R) -> io::Result<Self> {
        let end = inner.seek(SeekFrom::End(0))?;
        inner.seek(SeekFrom::Start(0))?;
        Ok(ElementReader { inner, pos: 0, end })
    }

    fn remaining(&self) -> u64 {
        self.end.saturating_sub(self.pos)
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<(), IngestError> {
        if (buf.len() as u64) > self.remaining() {
            return Err(IngestError::MalformedFile(format!(
                "truncated at byte {}: needed {} more bytes",
                self.pos,
                buf.len()
            )));
        }
        self.inner.read_exact(buf)?;
        self.pos += buf.len() as u64;
        Ok(())
    }

    fn u16(&mut self) -> Result<u16, IngestError> {
        let mut b = [0u8; 2];
        self.read_exact(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    fn u32(&mut self) -> Result<u32, IngestError> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn skip(&mut self, len: u32, tag: Tag) -> Result<(), IngestError> {
        if u64::from(len) > self.remaining() {
            return Err(IngestError::MalformedFile(format!(
                "element ({:04X},{:04X}) declares {} bytes but only {} remain",
                tag.0,
                tag.1,
                len,
                self.remaining()
            )));
        }
        self.inner.seek(SeekFrom::Current(i64::from(len)))?;
        self.pos += u64::from(len);
        Ok(())
    }

    fn value(&mut self, len: u32, tag: Tag) -> Result<String, IngestError> {
        if len > MAX_WANTED_VALUE_LEN {
            return Err(IngestError::MalformedFile(format!("element {tag} declares implausible length {len}")));
        }
        let mut buf = vec![0u8; len as usize];
        self.read_exact(&mut buf)?;
        Ok(decode_text(&buf))
    }
}

struct Header {
    tag: Tag,
    length: u32,
    is_sequence: bool,
}

fn read_header<R: Read + Seek>(
    r: &mut ElementReader<R>,
    tag: Tag,
    syntax: TransferSyntax,
) -> Result<Header, IngestError> {
    // Item and delimitation tags carry no VR in either syntax.
    if tag.0 == 0xFFFE {
        let length = r.u32()?;
        return Ok(Header { tag, length, is_sequence: false });
    }
    match syntax {
        TransferSyntax::ExplicitVrLittleEndian => {
            let mut vr = [0u8; 2];
            r.read_exact(&mut vr)?;
            if !vr.iter().all(u8::is_ascii_uppercase) {
                return Err(IngestError::MalformedFile(format!(
                    "invalid VR bytes {:02X?} for ({:04X},{:04X}) at byte {}",
                    vr,
                    tag.0,
                    tag.1,
                    r.pos - 2
                )));
            }
            let length = if has_long_length(vr) {
                r.u16()?;
                r.u32()?
            } else {
                u32::from(r.u16()?)
            };
            Ok(Header { tag, length, is_sequence: matches!(&vr, b"SQ" | b"UN") })
        }
        TransferSyntax::ImplicitVrLittleEndian => {
            let length = r.u32()?;
            Ok(Header { tag, length, is_sequence: false })
        }
    }
}

/// Reads the study-level attributes of a part-10 stream without interpreting them.
pub fn read_dicom_attributes<R: Read + Seek>(reader: R) -> Result<StudyAttributes, IngestError> {
    let mut r = ElementReader::new(reader)?;

    let mut prefix = [0u8; PREAMBLE_LEN + 4];
    if r.remaining() < prefix.len() as u64 {
        return Err(IngestError::MalformedFile(format!("stream of {} bytes ends before the DICM magic", r.end)));
    }
    r.read_exact(&mut prefix)?;
    if &prefix[PREAMBLE_LEN..] != MAGIC {
        return Err(IngestError::MalformedFile("missing DICM magic after preamble".into()));
    }

    let mut attrs = StudyAttributes::default();
    let mut syntax: Option<TransferSyntax> = None;
    // Nesting depth inside undefined-length sequences and items.
    let mut depth = 0usize;

    while r.remaining() > 0 {
        let tag = Tag(r.u16()?, r.u16()?);
        let in_meta = tag.0 == 0x0002;
        let element_syntax = if in_meta {
            TransferSyntax::ExplicitVrLittleEndian
        } else {
            match syntax {
                Some(s) => s,
                None => return Err(IngestError::MalformedFile("file meta group has no TransferSyntaxUID".into())),
            }
        };
        let header = read_header(&mut r, tag, element_syntax)?;

        if header.tag.0 == 0xFFFE {
            match header.tag.1 {
                0xE000 if header.length == UNDEFINED_LENGTH => depth += 1,
                0xE000 => r.skip(header.length, header.tag)?,
                0xE00D | 0xE0DD => depth = depth.saturating_sub(1),
                _ => r.skip(header.length, header.tag)?,
            }
            continue;
        }
        if header.length == UNDEFINED_LENGTH {
            // Only sequences may be undefined-length in uncompressed syntaxes.
            if header.is_sequence || element_syntax == TransferSyntax::ImplicitVrLittleEndian {
                depth += 1;
                continue;
            }
            return Err(IngestError::MalformedFile(format!("undefined length on non-sequence element {}", header.tag)));
        }

        if depth == 0 && wanted(header.tag) {
            let value = r.value(header.length, header.tag)?;
            if header.tag == Tag::TRANSFER_SYNTAX_UID {
                syntax = Some(TransferSyntax::from_uid(&value)?);
            } else {
                attrs.set(header.tag, value);
            }
        } else {
            r.skip(header.length, header.tag)?;
        }
    }

    if syntax.is_none() {
        return Err(IngestError::MalformedFile("file meta group has no TransferSyntaxUID".into()));
    }
    Ok(attrs)
}

/// Parses a DICOM part-10 stream into a [`StudyMeta`].
pub fn parse_dicom_meta<R: Read + Seek>(reader: R, source_uri: impl Into<String>) -> Result<StudyMeta, IngestError> {
    read_dicom_attributes(reader)?.into_meta(source_uri)
}
