# 层级超对称模型的 RG 计算包
__version__ = "0.1.0"
