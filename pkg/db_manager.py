#!/usr/bin/env python3
"""
结果管理模块 - 使用SQLAlchemy保存 eval / sweep / compare 的指标记录
"""

import logging
import os
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from sqlalchemy import Column, DateTime, Float, Integer, String, create_engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker

logger = logging.getLogger(__name__)

Base = declarative_base()

"""
run_id 是一次命令执行的唯一标识，同一次 sweep 的所有行共享一个 run_id。
command 是产生记录的子命令（eval / sweep / compare）。
image_id 是语料中的图像名（stem），sweep 的平均行记为 "*"。
mode 是字典模式（coupled / separate / single），eval 时可为空。
param_name / param_value 是 sweep 扫描的参数及其取值。
nmi / qabf / ssim / mse / mask_accuracy 是指标，缺失时为空。
"""


class MetricRecord(Base):
    """指标记录模型"""
    __tablename__ = 'metric_records'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(String, nullable=False, index=True, comment='运行ID')
    command = Column(String, nullable=False, comment='子命令')
    image_id = Column(String, nullable=False, comment='图像名')
    mode = Column(String, nullable=True, comment='字典模式')
    param_name = Column(String, nullable=True, comment='扫描参数名')
    param_value = Column(Float, nullable=True, comment='扫描参数值')
    nmi = Column(Float, nullable=True)
    qabf = Column(Float, nullable=True)
    ssim = Column(Float, nullable=True)
    mse = Column(Float, nullable=True)
    mask_accuracy = Column(Float, nullable=True, comment='决策掩码准确率')
    created_at = Column(DateTime, default=datetime.now, nullable=False, comment='创建时间')

    FIELDS = ('image_id', 'mode', 'param_name', 'param_value',
              'nmi', 'qabf', 'ssim', 'mse', 'mask_accuracy')

    def to_dict(self) -> Dict:
        """转换为字典"""
        row = {'id': self.id, 'run_id': self.run_id, 'command': self.command}
        row.update({name: getattr(self, name) for name in self.FIELDS})
        row['created_at'] = self.created_at.isoformat() if self.created_at else None
        return row


class ResultsManager:
    """管理指标记录"""

    def __init__(self, db_path: str):
        self.db_path = db_path

        # 确保数据库文件的父目录存在
        db_dir = os.path.dirname(db_path)
        if db_dir:
            os.makedirs(db_dir, exist_ok=True)

        database_url = f'sqlite:///{Path(db_path).resolve()}'
        logger.debug(f"数据库 URL: {database_url}")
        try:
            self.engine = create_engine(database_url, echo=False)
            self.SessionLocal = sessionmaker(bind=self.engine, expire_on_commit=False)
            Base.metadata.create_all(self.engine)
        except Exception as e:
            logger.error(f"创建数据库引擎失败: {e}", exc_info=True)
            raise

    def _get_session(self) -> Session:
        """获取数据库会话"""
        return self.SessionLocal()

    def save_records(self, run_id: str, command: str, rows: Iterable[Dict]) -> int:
        """批量保存指标行，rows 中多余的键被忽略，返回写入条数"""
        session = self._get_session()
        try:
            records = [
                MetricRecord(run_id=run_id, command=command,
                             **{name: row.get(name) for name in MetricRecord.FIELDS})
                for row in rows
            ]
            session.add_all(records)
            session.commit()
            logger.info(f"保存 {len(records)} 条指标记录: run_id={run_id}, command={command}")
            return len(records)
        except Exception as e:
            session.rollback()
            logger.error(f"保存指标记录失败: {e}")
            raise
        finally:
            session.close()

    def list_run(self, run_id: str) -> List[Dict]:
        """按写入顺序列出一次运行的所有记录"""
        session = self._get_session()
        try:
            records = session.query(MetricRecord).filter_by(
                run_id=run_id
            ).order_by(MetricRecord.id).all()
            return [record.to_dict() for record in records]
        finally:
            session.close()

    def list_all(self, command: Optional[str] = None) -> List[Dict]:
        """列出所有记录（可按子命令过滤），最新的在前"""
        session = self._get_session()
        try:
            query = session.query(MetricRecord)
            if command:
                query = query.filter_by(command=command)
            records = query.order_by(MetricRecord.id.desc()).all()
            return [record.to_dict() for record in records]
        finally:
            session.close()

    def delete_run(self, run_id: str) -> int:
        """删除一次运行的所有记录，返回删除条数"""
        session = self._get_session()
        try:
            count = session.query(MetricRecord).filter_by(run_id=run_id).delete()
            session.commit()
            if count:
                logger.info(f"删除运行记录: run_id={run_id}, 共 {count} 条")
            else:
                logger.warning(f"运行记录不存在: run_id={run_id}")
            return count
        except Exception as e:
            session.rollback()
            logger.error(f"删除运行记录失败: {e}")
            raise
        finally:
            session.close()
