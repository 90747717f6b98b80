'''
异常定义模块

工具包内所有可预期错误的类层次。每个异常带有一个简短的 code (错误名)，批处理层据此填写逐项状态，
不会因为单个文件或单个指标失败而中断整个运行。
'''


class ToolkitError(Exception):
    """工具包错误基类。"""

    code = "ToolkitError"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)

    def to_status(self) -> dict:
        """转换为写入报告的状态字典。"""
        return {'status': self.code, 'error': str(self)}


# --- 音频读写 ---
class MalformedFile(ToolkitError, ValueError):
    code = "MalformedFile"


class UnsupportedEncoding(ToolkitError, ValueError):
    code = "UnsupportedEncoding"


class EmptyAudio(ToolkitError, ValueError):
    code = "EmptyAudio"


class IoError(ToolkitError, OSError):
    code = "IoError"


class SilentInput(ToolkitError, ValueError):
    code = "SilentInput"


class ClippingDetected(UserWarning):
    """保存或归一化时出现 |sample| > 1，仅作警告。"""


# --- 信号处理 ---
class InputTooShort(ToolkitError, ValueError):
    code = "InputTooShort"


class NonColaConfig(ToolkitError, ValueError):
    code = "NonColaConfig"


class DegenerateFrame(ToolkitError, ValueError):
    code = "DegenerateFrame"


# --- 声学参数 / 损失 / 改进评估 ---
class NoValidFrames(ToolkitError, ValueError):
    code = "NoValidFrames"


class DimensionMismatch(ToolkitError, ValueError):
    code = "DimensionMismatch"


class LengthMismatch(ToolkitError, ValueError):
    code = "LengthMismatch"


class KindMismatch(ToolkitError, TypeError):
    code = "KindMismatch"


class CompressedMask(ToolkitError, ValueError):
    code = "CompressedMask"


class AlreadyCompressed(ToolkitError, ValueError):
    code = "AlreadyCompressed"


class UncompressedInput(ToolkitError, ValueError):
    code = "UncompressedInput"


class OutOfDomain(ToolkitError, ValueError):
    code = "OutOfDomain"


class UndefinedBaseline(ToolkitError, ZeroDivisionError):
    code = "UndefinedBaseline"


# --- 客观指标 ---
class TooShort(ToolkitError, ValueError):
    code = "TooShort"


class NoActiveSpeech(ToolkitError, ValueError):
    code = "NoActiveSpeech"


class EmptyRegion(ToolkitError, ValueError):
    code = "EmptyRegion"


class PesqAdapterError(ToolkitError, RuntimeError):
    code = "PesqFailed"


# --- 批处理 ---
class ConfigInvalid(ToolkitError, ValueError):
    code = "ConfigInvalid"


class MissingPair(ToolkitError, FileNotFoundError):
    code = "MissingPair"


class EmptyPool(ToolkitError, ValueError):
    code = "EmptyPool"
