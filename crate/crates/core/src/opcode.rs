//! The closed opcode alphabet used by basic blocks.
//!
//! Operands are never stored; a block is just an ordered list of mnemonics.
//! Each mnemonic maps to exactly one byte (its position in [`Opcode::ALL`]),
//! and that byte stream is what the fuzzy hash consumes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

macro_rules! opcodes {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// A generic stack/branch/arithmetic/call mnemonic.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        #[repr(u8)]
        pub enum Opcode {
            $($variant),+
        }

        impl Opcode {
            /// Every mnemonic, ordered by byte value.
            pub const ALL: &'static [Opcode] = &[$(Opcode::$variant),+];

            pub fn mnemonic(self) -> &'static str {
                match self {
                    $(Opcode::$variant => $name),+
                }
            }

            pub fn from_mnemonic(s: &str) -> Option<Opcode> {
                match s {
                    $($name => Some(Opcode::$variant),)+
                    _ => None,
                }
            }
        }
    };
}

opcodes! {
    Nop => "nop",
    Const => "const",
    ConstWide => "const_wide",
    ConstString => "const_string",
    ConstClass => "const_class",
    Move => "move",
    MoveWide => "move_wide",
    MoveObject => "move_object",
    MoveResult => "move_result",
    MoveException => "move_exception",
    LoadLocal => "load_local",
    StoreLocal => "store_local",
    ArrayGet => "array_get",
    ArrayPut => "array_put",
    FieldGet => "field_get",
    FieldPut => "field_put",
    StaticGet => "static_get",
    StaticPut => "static_put",
    NewInstance => "new_instance",
    NewArray => "new_array",
    ArrayLength => "array_length",
    CheckCast => "check_cast",
    InstanceOf => "instance_of",
    MonitorEnter => "monitor_enter",
    MonitorExit => "monitor_exit",
    Throw => "throw",
    Return => "return",
    ReturnVoid => "return_void",
    Goto => "goto",
    IfEq => "if_eq",
    IfNe => "if_ne",
    IfLt => "if_lt",
    IfGe => "if_ge",
    IfGt => "if_gt",
    IfLe => "if_le",
    IfEqz => "if_eqz",
    IfNez => "if_nez",
    Switch => "switch",
    Cmp => "cmp",
    Add => "add",
    Sub => "sub",
    Mul => "mul",
    Div => "div",
    Rem => "rem",
    Neg => "neg",
    And => "and",
    Or => "or",
    Xor => "xor",
    Shl => "shl",
    Shr => "shr",
    Ushr => "ushr",
    Not => "not",
    ConvertInt => "convert_int",
    ConvertLong => "convert_long",
    ConvertFloat => "convert_float",
    ConvertDouble => "convert_double",
    InvokeVirtual => "invoke_virtual",
    InvokeStatic => "invoke_static",
    InvokeDirect => "invoke_direct",
    InvokeInterface => "invoke_interface",
    InvokeSuper => "invoke_super",
    Dup => "dup",
    Pop => "pop",
    Swap => "swap",
}

impl Opcode {
    #[inline]
    pub fn byte(self) -> u8 {
        self as u8
    }

    pub fn from_byte(b: u8) -> Option<Opcode> {
        Opcode::ALL.get(b as usize).copied()
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown opcode mnemonic `{0}`")]
pub struct UnknownOpcode(pub String);

impl FromStr for Opcode {
    type Err = UnknownOpcode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Opcode::from_mnemonic(s).ok_or_else(|| UnknownOpcode(s.to_string()))
    }
}

impl Serialize for Opcode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.mnemonic())
    }
}

impl<'de> Deserialize<'de> for Opcode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn alphabet_has_64_distinct_entries() {
        assert_eq!(Opcode::ALL.len(), 64);
        let names: HashSet<_> = Opcode::ALL.iter().map(|o| o.mnemonic()).collect();
        assert_eq!(names.len(), 64);
        for (i, op) in Opcode::ALL.iter().enumerate() {
            assert_eq!(op.byte() as usize, i);
            assert_eq!(Opcode::from_byte(i as u8), Some(*op));
            assert_eq!(op.mnemonic().parse::<Opcode>().unwrap(), *op);
        }
        assert_eq!(Opcode::from_byte(64), None);
    }

    #[test]
    fn unknown_mnemonic_is_rejected() {
        assert!("iadd".parse::<Opcode>().is_err());
        assert!("NOP".parse::<Opcode>().is_err());
    }
}
