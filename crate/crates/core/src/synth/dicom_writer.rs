//! Writer for small DICOM part-10 fixtures (uncompressed little endian only).

use crate::pacs_ingest::{Tag, TransferSyntax};

#[derive(Debug, Clone, PartialEq)]
struct Element {
    tag: Tag,
    vr: [u8; 2],
    value: Vec<u8>,
}

/// Builder for a part-10 byte stream. Dataset elements are written in the
/// order they were added.
#[derive(Debug, Clone, PartialEq)]
pub struct DicomFixture {
    syntax: TransferSyntax,
    elements: Vec<Element>,
}

fn pad(vr: [u8; 2], mut value: Vec<u8>) -> Vec<u8> {
    if value.len() % 2 == 1 {
        value.push(if &vr == b"UI" || &vr == b"OB" { 0 } else { b' ' });
    }
    value
}

fn long_length(vr: [u8; 2]) -> bool {
    matches!(&vr, b"OB" | b"OD" | b"OF" | b"OL" | b"OV" | b"OW" | b"SQ" | b"SV" | b"UC" | b"UN" | b"UR" | b"UT" | b"UV")
}

fn vr_bytes(vr: &str) -> [u8; 2] {
    let b = vr.as_bytes();
    assert!(b.len() == 2, "VR must be two characters");
    [b[0], b[1]]
}

fn write_element(out: &mut Vec<u8>, e: &Element, explicit: bool) {
    out.extend_from_slice(&e.tag.0.to_le_bytes());
    out.extend_from_slice(&e.tag.1.to_le_bytes());
    let len = e.value.len() as u32;
    if explicit {
        out.extend_from_slice(&e.vr);
        if long_length(e.vr) {
            out.extend_from_slice(&[0, 0]);
            out.extend_from_slice(&len.to_le_bytes());
        } else {
            out.extend_from_slice(&(len as u16).to_le_bytes());
        }
    } else {
        out.extend_from_slice(&len.to_le_bytes());
    }
    out.extend_from_slice(&e.value);
}

impl DicomFixture {
    pub fn new(syntax: TransferSyntax) -> Self {
        DicomFixture { syntax, elements: Vec::new() }
    }

    /// Study-level fixture with the six attributes the ingester needs.
    pub fn study(
        syntax: TransferSyntax,
        patient_id: &str,
        study_uid: &str,
        date: &str,
        time: &str,
        modality: &str,
        body_part: &str,
    ) -> Self {
        DicomFixture::new(syntax)
            .string(Tag::STUDY_DATE, "DA", date)
            .string(Tag::STUDY_TIME, "TM", time)
            .string(Tag::MODALITY, "CS", modality)
            .string(Tag::PATIENT_ID, "LO", patient_id)
            .string(Tag::BODY_PART_EXAMINED, "CS", body_part)
            .string(Tag::STUDY_INSTANCE_UID, "UI", study_uid)
    }

    pub fn string(self, tag: Tag, vr: &str, value: &str) -> Self {
        self.bytes(tag, vr, value.as_bytes().to_vec())
    }

    pub fn bytes(mut self, tag: Tag, vr: &str, value: Vec<u8>) -> Self {
        let vr = vr_bytes(vr);
        self.elements.retain(|e| e.tag != tag);
        self.elements.push(Element { tag, vr, value: pad(vr, value) });
        self
    }

    pub fn without(mut self, tag: Tag) -> Self {
        self.elements.retain(|e| e.tag != tag);
        self
    }

    /// Reorders dataset elements by tag, as a conforming writer would.
    pub fn sorted(mut self) -> Self {
        self.elements.sort_by_key(|e| e.tag);
        self
    }

    /// Reorders dataset elements by an arbitrary permutation of their indices.
    pub fn permuted(mut self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.elements.len());
        self.elements = order.iter().map(|&i| self.elements[i].clone()).collect();
        self
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_bytes_with_syntax_uid(self.syntax.uid())
    }

    /// Encodes with an arbitrary TransferSyntaxUID in the meta group; the
    /// dataset is still written per the fixture's own syntax.
    pub fn to_bytes_with_syntax_uid(&self, syntax_uid: &str) -> Vec<u8> {
        let mut meta = Vec::new();
        let meta_elements = [
            Element { tag: Tag(0x0002, 0x0001), vr: *b"OB", value: vec![0, 1] },
            Element {
                tag: Tag(0x0002, 0x0002),
                vr: *b"UI",
                value: pad(*b"UI", b"1.2.840.10008.5.1.4.1.1.1.1".to_vec()),
            },
            Element { tag: Tag::TRANSFER_SYNTAX_UID, vr: *b"UI", value: pad(*b"UI", syntax_uid.as_bytes().to_vec()) },
        ];
        for e in &meta_elements {
            write_element(&mut meta, e, true);
        }

        let mut out = vec![0u8; 128];
        out.extend_from_slice(b"DICM");
        let group_length =
            Element { tag: Tag(0x0002, 0x0000), vr: *b"UL", value: (meta.len() as u32).to_le_bytes().to_vec() };
        write_element(&mut out, &group_length, true);
        out.extend_from_slice(&meta);

        let explicit = self.syntax == TransferSyntax::ExplicitVrLittleEndian;
        for e in &self.elements {
            write_element(&mut out, e, explicit);
        }
        out
    }
}
