use super::{Condition, RuleAst, RuleError, MAX_COUNT, MAX_DEPTH};

/// Parses rule text into its tree. Whitespace around tokens is skipped; every
/// other deviation from the grammar is a [`RuleError::Syntax`] carrying the
/// byte offset where parsing stopped.
pub fn parse(text: &str) -> Result<RuleAst, RuleError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let ast = p.rule(0)?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("end of input"));
    }
    Ok(ast)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, expected: &str) -> RuleError {
        self.error_at(self.pos, expected)
    }

    fn error_at(&self, offset: usize, expected: &str) -> RuleError {
        RuleError::Syntax {
            offset,
            expected: expected.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self
            .src
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_whitespace())
        {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, byte: u8, expected: &str) -> Result<(), RuleError> {
        self.skip_ws();
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(expected))
        }
    }

    fn take_while(&mut self, pred: impl Fn(u8) -> bool) -> &str {
        let start = self.pos;
        while self.peek().is_some_and(&pred) {
            self.pos += 1;
        }
        // only ASCII bytes are ever accepted by the predicates used here
        std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default()
    }

    fn rule(&mut self, depth: usize) -> Result<RuleAst, RuleError> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some(b) if b.is_ascii_digit() => self.leaf(start),
            Some(b) if b.is_ascii_alphabetic() => {
                let condition = match self.take_while(|b| b.is_ascii_alphabetic()) {
                    "AND" => Condition::And,
                    "OR" => Condition::Or,
                    _ => return Err(self.error_at(start, "count or AND/OR")),
                };
                if depth >= MAX_DEPTH {
                    return Err(self.error_at(start, "nesting depth within limit"));
                }
                self.expect(b'(', "'('")?;
                let left = self.rule(depth + 1)?;
                self.expect(b',', "','")?;
                let right = self.rule(depth + 1)?;
                self.expect(b')', "')'")?;
                Ok(RuleAst::Node {
                    condition,
                    left: Box::new(left),
                    right: Box::new(right),
                })
            }
            _ => Err(self.error("count or AND/OR")),
        }
    }

    fn leaf(&mut self, start: usize) -> Result<RuleAst, RuleError> {
        let digits = self.take_while(|b| b.is_ascii_digit());
        // saturate: anything past MAX_COUNT is rejected below anyway
        let count = digits.bytes().fold(0u64, |acc, d| {
            (acc * 10 + u64::from(d - b'0')).min(u64::from(MAX_COUNT) + 1)
        });
        if count == 0 {
            return Err(self.error_at(start, "count >= 1"));
        }
        if count > u64::from(MAX_COUNT) {
            return Err(self.error_at(start, "count <= 1000000"));
        }
        self.expect(b':', "':'")?;
        self.skip_ws();
        let event_type = self.take_while(|b| b.is_ascii_alphabetic()).to_string();
        if event_type.is_empty() {
            return Err(self.error("event type [a-zA-Z]+"));
        }
        Ok(RuleAst::Leaf {
            count: count as u32,
            event_type,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offset_of(text: &str) -> usize {
        match parse(text) {
            Err(RuleError::Syntax { offset, .. }) => offset,
            other => panic!("expected syntax error for {text:?}, got {other:?}"),
        }
    }

    #[test]
    fn smart_home_rule() {
        let ast = parse("OR(AND(6:temperature,6:wind),AND(1:temperature,1:motion))").unwrap();
        assert_eq!(
            ast,
            RuleAst::or(
                RuleAst::and(RuleAst::leaf(6, "temperature"), RuleAst::leaf(6, "wind")),
                RuleAst::and(RuleAst::leaf(1, "temperature"), RuleAst::leaf(1, "motion")),
            )
        );
    }

    #[test]
    fn bare_leaf() {
        assert_eq!(parse("3:a").unwrap(), RuleAst::leaf(3, "a"));
    }

    #[test]
    fn whitespace_is_ignored() {
        let ast = parse("  OR(\n    AND(5:packetLoss, 1:temperature),\n    1 : powerConsumption\n)\n")
            .unwrap();
        assert_eq!(
            ast.render(),
            "OR(AND(5:packetLoss,1:temperature),1:powerConsumption)"
        );
    }

    #[test]
    fn not_is_rejected_at_start() {
        let err = parse("NOT(1:a)").unwrap_err();
        assert_eq!(
            err,
            RuleError::Syntax {
                offset: 0,
                expected: "count or AND/OR".into()
            }
        );
    }

    #[test]
    fn zero_count() {
        assert_eq!(offset_of("0:a"), 0);
        assert_eq!(offset_of("AND(1:a,00:b)"), 8);
    }

    #[test]
    fn count_bounds() {
        assert!(parse("1000000:a").is_ok());
        assert_eq!(offset_of("1000001:a"), 0);
        assert_eq!(offset_of("99999999999999999999999:a"), 0);
    }

    #[test]
    fn positioned_errors() {
        assert_eq!(offset_of(""), 0);
        assert_eq!(offset_of("3a"), 1);
        assert_eq!(offset_of("3:"), 2);
        assert_eq!(offset_of("3:a1"), 3);
        assert_eq!(offset_of("(3:a)"), 0);
        assert_eq!(offset_of("AND(1:a)"), 7);
        assert_eq!(offset_of("AND(1:a,1:b"), 11);
        assert_eq!(offset_of("AND(1:a,1:b))"), 12);
        assert_eq!(offset_of("and(1:a,1:b)"), 0);
        assert_eq!(offset_of("OR 1:a"), 3);
    }

    #[test]
    fn depth_limit() {
        let mut text = "1:a".to_string();
        for _ in 0..MAX_DEPTH {
            text = format!("AND({text},1:b)");
        }
        assert!(parse(&text).is_ok());
        let deeper = format!("OR({text},1:c)");
        assert!(matches!(parse(&deeper), Err(RuleError::Syntax { .. })));
    }
}
