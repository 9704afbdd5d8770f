from typing import Literal
import workspace.HumanEval.workflows.template.operator as operator
import workspace.HumanEval.workflows.round_5.prompt as prompt_custom
from scripts.async_llm import create_llm_instance
import weave


DatasetType = Literal["HumanEval", "MBPP", "GSM8K", "MATH", "HotpotQA", "DROP"]

class Workflow:
    def __init__(
        self,
        name: str,
        llm_config,
        dataset: DatasetType,
    ) -> None:
        self.name = name
        self.dataset = dataset
        self.llm = create_llm_instance(llm_config)
        self.custom = operator.Custom(self.llm)
        self.custom_code_generate = operator.CustomCodeGenerate(self.llm)
        self.sc_ensemble = operator.ScEnsemble(self.llm)
        self.test = operator.Test(self.llm)

    async def __call__(self, problem: str, entry_point: str):
        """
        Implementation of the workflow
        Custom operator to generate multiple solutions and select the best one.
        """
        # Generate initial solutions using custom code generation
        solution_response_1 = await self.custom_code_generate(problem=problem, entry_point=entry_point, instruction=prompt_custom.CODE_GENERATE_PROMPT)
        solution_1 = solution_response_1['response']
        
        solution_response_2 = await self.custom_code_generate(problem=problem, entry_point=entry_point, instruction=prompt_custom.CODE_GENERATE_PROMPT)
        solution_2 = solution_response_2['response']
        
        # Generate an optimized solution
        optimized_solution_response = await self.custom_code_generate(problem=problem, entry_point=entry_point, instruction=prompt_custom.OPTIMIZED_CODE_GENERATE_PROMPT)
        optimized_solution = optimized_solution_response['response']
        
        # Combine solutions using ensemble method
        ensemble_response = await self.sc_ensemble(solutions=[solution_1, solution_2, optimized_solution], problem=problem)
        combined_solution = ensemble_response['response']
        
        # Test the combined solution
        test_result = await self.test(problem=problem, solution=combined_solution, entry_point=entry_point)
        
        # If the solution fails the test, improve the code
        if not test_result['result']:
            improved_solution_response = await self.custom(input=problem, instruction=prompt_custom.IMPROVE_CODE_PROMPT)
            improved_solution = improved_solution_response['response']
            # Test the improved solution
            test_result = await self.test(problem=problem, solution=improved_solution, entry_point=entry_point)
            combined_solution = improved_solution if test_result['result'] else combined_solution  # Use improved solution if it passes tests
        
        return combined_solution, self.llm.get_usage_summary()["total_cost"]

