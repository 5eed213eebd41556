import datetime as dt
import logging
from typing import Any, Dict, Optional

from sqlalchemy import (
    JSON,
    Column,
    DateTime,
    Float,
    Integer,
    String,
    UniqueConstraint,
    create_engine,
    inspect,
)
from sqlalchemy.engine import Engine
from sqlalchemy.engine.url import make_url
from sqlalchemy.exc import SQLAlchemyError
from sqlalchemy.orm import declarative_base, sessionmaker

from config import Config

DATABASE_URL = Config.DATABASE_URL

logger = logging.getLogger(__name__)


def _build_engine(database_url: str | None = None) -> Engine:
    url = make_url(database_url or DATABASE_URL)
    connect_args = {}

    if url.drivername.startswith("postgresql") or url.drivername == "postgres":
        url = url.set(drivername="postgresql+psycopg2")
        if not url.query.get("sslmode"):
            connect_args["sslmode"] = "prefer"

    return create_engine(url, connect_args=connect_args, pool_pre_ping=True)


engine = _build_engine()
SessionLocal = sessionmaker(bind=engine)
Base = declarative_base()


class TrainingRun(Base):
    __tablename__ = "training_runs"

    id = Column(Integer, primary_key=True, index=True)
    config_hash = Column(String(32), index=True)
    seed = Column(Integer)
    mode = Column(String(20))
    status = Column(String(20), default="running")
    out_dir = Column(String(512))
    config = Column(JSON)
    updates = Column(Integer, default=0)
    final_success_rate = Column(Float, nullable=True)
    created_at = Column(DateTime, default=dt.datetime.utcnow)
    finished_at = Column(DateTime, nullable=True)


class AblationCell(Base):
    __tablename__ = "ablation_cells"
    __table_args__ = (UniqueConstraint("sweep", "param", "seed", "config_hash", name="uq_ablation_cell"),)

    id = Column(Integer, primary_key=True, index=True)
    sweep = Column(String(50), index=True)
    param = Column(String(50))
    seed = Column(Integer)
    config_hash = Column(String(32))
    final_success_rate = Column(Float)
    created_at = Column(DateTime, default=dt.datetime.utcnow)


class DbService:
    """Registry of training runs and completed ablation cells."""

    def __init__(self, database_url: str | None = None) -> None:
        if database_url is None:
            self._engine = engine
            self._sessions = SessionLocal
        else:
            self._engine = _build_engine(database_url)
            self._sessions = sessionmaker(bind=self._engine)
        try:
            Base.metadata.create_all(bind=self._engine)
            self._log_schema_status()
        except Exception as exc:  # noqa: BLE001
            logger.warning("Unable to initialize run registry schema: %s", exc, exc_info=True)

    def _log_schema_status(self) -> None:
        inspector = inspect(self._engine)
        missing = [table for table in ("training_runs", "ablation_cells") if not inspector.has_table(table)]
        if missing:
            logger.warning("Run registry is missing tables: %s", ", ".join(missing))

    @staticmethod
    def _serialize_run(run: TrainingRun) -> Dict[str, Any]:
        return {
            "id": run.id,
            "config_hash": run.config_hash,
            "seed": run.seed,
            "mode": run.mode,
            "status": run.status,
            "out_dir": run.out_dir,
            "config": run.config,
            "updates": run.updates,
            "final_success_rate": run.final_success_rate,
            "created_at": run.created_at,
            "finished_at": run.finished_at,
        }

    @staticmethod
    def _serialize_cell(cell: AblationCell) -> Dict[str, Any]:
        return {
            "sweep": cell.sweep,
            "param": cell.param,
            "seed": cell.seed,
            "config_hash": cell.config_hash,
            "final_success_rate": cell.final_success_rate,
        }

    def start_run(self, config: Dict[str, Any], config_hash: str, out_dir: str) -> int:
        with self._sessions() as db:
            run = TrainingRun(
                config_hash=config_hash,
                seed=config.get("seed"),
                mode=config.get("mode"),
                out_dir=out_dir,
                config=config,
            )
            db.add(run)
            db.commit()
            db.refresh(run)
            return run.id

    def finish_run(
        self,
        run_id: int,
        updates: int,
        final_success_rate: float | None,
        status: str = "finished",
    ) -> None:
        with self._sessions() as db:
            run = db.get(TrainingRun, run_id)
            if run is None:
                logger.warning("Training run %s is not registered", run_id)
                return
            run.updates = updates
            run.final_success_rate = final_success_rate
            run.status = status
            run.finished_at = dt.datetime.utcnow()
            db.commit()

    def get_run(self, run_id: int) -> Optional[Dict[str, Any]]:
        with self._sessions() as db:
            run = db.get(TrainingRun, run_id)
            return self._serialize_run(run) if run else None

    def list_runs(self, status: str | None = None) -> list[Dict[str, Any]]:
        with self._sessions() as db:
            query = db.query(TrainingRun)
            if status is not None:
                query = query.filter(TrainingRun.status == status)
            return [self._serialize_run(run) for run in query.order_by(TrainingRun.id).all()]

    def record_cell(self, sweep: str, param: str, seed: int, config_hash: str, final_success_rate: float) -> None:
        with self._sessions() as db:
            existing = (
                db.query(AblationCell)
                .filter_by(sweep=sweep, param=param, seed=seed, config_hash=config_hash)
                .first()
            )
            if existing is not None:
                existing.final_success_rate = final_success_rate
            else:
                db.add(
                    AblationCell(
                        sweep=sweep,
                        param=param,
                        seed=seed,
                        config_hash=config_hash,
                        final_success_rate=final_success_rate,
                    )
                )
            try:
                db.commit()
            except SQLAlchemyError:
                db.rollback()
                logger.exception("Could not record ablation cell %s/%s/%s", sweep, param, seed)

    def completed_cells(self, sweep: str, config_hash: str) -> Dict[tuple[str, int], float]:
        with self._sessions() as db:
            cells = db.query(AblationCell).filter_by(sweep=sweep, config_hash=config_hash).all()
            return {(cell.param, cell.seed): cell.final_success_rate for cell in cells}

    def get_cells(self, sweep: str) -> list[Dict[str, Any]]:
        with self._sessions() as db:
            cells = db.query(AblationCell).filter_by(sweep=sweep).order_by(AblationCell.id).all()
            return [self._serialize_cell(cell) for cell in cells]
