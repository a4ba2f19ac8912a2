use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::config::CorpusFormat;
use super::HarnessError;
use crate::codec::{TokenId, TokenSequence, Vocabulary};
use crate::sidecar::SidecarClient;

/// Reads a corpus and cuts it into packets of exactly `packet_len` tokens.
///
/// All passages are concatenated in file order before chunking; a trailing
/// remainder shorter than a packet is dropped.
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    vocab: &Vocabulary,
    packet_len: usize,
    sidecar: Option<&SidecarClient>,
) -> Result<Vec<TokenSequence>, HarnessError> {
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut ids = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        match format {
            CorpusFormat::Ids => parse_id_line(&line, n + 1, vocab, &mut ids)?,
            CorpusFormat::Text => {
                if line.trim().is_empty() {
                    continue;
                }
                let client = sidecar.ok_or_else(|| {
                    HarnessError::Config("text corpora need the sidecar tokenize endpoint".into())
                })?;
                let tokens = client.tokenize(&line)?;
                for id in tokens {
                    if !vocab.contains(id) {
                        return Err(HarnessError::corpus(
                            n + 1,
                            format!("tokenizer returned id {id} outside vocabulary {}", vocab.size()),
                        ));
                    }
                    ids.push(id);
                }
            }
        }
    }
    if ids.is_empty() {
        return Err(HarnessError::corpus(0, format!("{} contains no tokens", path.display())));
    }
    let packets = packetize(&ids, packet_len, vocab)?;
    if packets.is_empty() {
        return Err(HarnessError::corpus(
            0,
            format!("{} tokens is less than one packet of {packet_len}", ids.len()),
        ));
    }
    Ok(packets)
}

fn parse_id_line(line: &str, line_no: usize, vocab: &Vocabulary, out: &mut Vec<TokenId>) -> Result<(), HarnessError> {
    for field in line.split_whitespace() {
        let id: TokenId = field
            .parse()
            .map_err(|_| HarnessError::corpus(line_no, format!("malformed token id {field:?}")))?;
        if !vocab.contains(id) {
            return Err(HarnessError::corpus(
                line_no,
                format!("token id {id} is outside the vocabulary of size {}", vocab.size()),
            ));
        }
        out.push(id);
    }
    Ok(())
}

/// Consecutive packets of `packet_len` ids; the remainder is dropped.
pub fn packetize(ids: &[TokenId], packet_len: usize, vocab: &Vocabulary) -> Result<Vec<TokenSequence>, HarnessError> {
    ids.chunks_exact(packet_len)
        .map(|c| TokenSequence::new(c.to_vec(), vocab).map_err(|e| HarnessError::corpus(0, e.to_string())))
        .collect()
}

/// Writes one packet per line as space-separated ids.
pub fn write_id_corpus<W: Write, S: AsRef<[TokenId]>>(mut out: W, packets: &[S]) -> std::io::Result<()> {
    for p in packets {
        let line: Vec<String> = p.as_ref().iter().map(|id| id.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(contents: &str, v: usize, t: usize) -> Result<Vec<TokenSequence>, HarnessError> {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        load_corpus(f.path(), CorpusFormat::Ids, &Vocabulary::new(v, 0).unwrap(), t, None)
    }

    #[test]
    fn single_line_single_packet() {
        let p = load("5 7 9\n", 16, 3).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].ids(), &[5, 7, 9]);
    }

    #[test]
    fn remainder_dropped_across_lines() {
        let ids: Vec<String> = (0..300).map(|i| (i % 50).to_string()).collect();
        let text = format!("{}\n{}\n", ids[..100].join(" "), ids[100..].join(" "));
        let p = load(&text, 30522, 128).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1].ids()[0], (128 % 50) as TokenId);
    }

    #[test]
    fn load_errors() {
        assert!(matches!(load("40000", 30522, 1), Err(HarnessError::Corpus { line: 1, .. })));
        assert!(matches!(load("1 2\n3 x", 30522, 1), Err(HarnessError::Corpus { line: 2, .. })));
        assert!(matches!(load("", 30522, 1), Err(HarnessError::Corpus { .. })));
        assert!(matches!(load("1 2", 30522, 3), Err(HarnessError::Corpus { .. })));
        let missing = load_corpus(
            Path::new("/nonexistent/corpus.txt"),
            CorpusFormat::Ids,
            &Vocabulary::new(4, 0).unwrap(),
            2,
            None,
        );
        assert!(matches!(missing, Err(HarnessError::Io { .. })));
    }

    #[test]
    fn written_corpus_reloads() {
        let packets = vec![vec![1u32, 2, 3], vec![4, 5, 6]];
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write_id_corpus(&mut f, &packets).unwrap();
        let back = load_corpus(f.path(), CorpusFormat::Ids, &Vocabulary::new(8, 0).unwrap(), 3, None).unwrap();
        assert_eq!(back.into_iter().map(TokenSequence::into_inner).collect::<Vec<_>>(), packets);
    }
}
